//! Shared oracles and stub environments for the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use umbrella_core::env::{Environment, MountainCar, StandUp, State};
use umbrella_core::mlp::{stack, Activation, LayerSpec, MlpNetwork};
use umbrella_core::umbrella::{NetworkShape, UmbrellaNets};
use umbrella_core::Result;

/// The three network layouts at their default size for both environments.
pub fn architectures() -> Vec<(String, Vec<LayerSpec>)> {
    let shape = NetworkShape::default();
    let envs: [Box<dyn Environment>; 2] = [
        Box::new(MountainCar::default()),
        Box::new(StandUp::default()),
    ];
    let mut out = Vec::new();
    for env in &envs {
        out.push((
            format!("{}-policy", env.name()),
            shape.policy_specs(env.as_ref()),
        ));
        out.push((
            format!("{}-value", env.name()),
            shape.value_specs(env.as_ref()),
        ));
        out.push((
            format!("{}-density", env.name()),
            shape.density_specs(env.as_ref()),
        ));
    }
    out
}

/// Relative error with a floor on the denominator, so entries that are
/// zero up to rounding compare on an absolute scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Denominator floor for the gradient check. Central differences with
/// `h = 1e-5` carry roughly 1e-10 absolute error, so gradients below this
/// floor are effectively compared at an absolute tolerance of 1e-9.
pub const GRAD_FLOOR: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

fn objective(net: &MlpNetwork, x: &Array2<f64>, u: &Array2<f64>) -> f64 {
    let (y, _) = net.forward(x.view()).expect("forward");
    (&y * u).sum()
}

fn activate(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Elu => {
            if z >= 0.0 {
                z
            } else {
                z.exp_m1()
            }
        }
        Activation::Tanh => z.tanh(),
        Activation::Identity => z,
        Activation::Exp => z.exp(),
    }
}

/// `<u, y>` after replacing column `unit` of layer `layer`'s pre-activation
/// by `column`. Only that unit changes, so the next layer gets a rank-one
/// update from the stored forward pass and the rest is recomputed.
fn perturbed_objective(
    net: &MlpNetwork,
    pre: &[Array2<f64>],
    post: &[Array2<f64>],
    u: &Array2<f64>,
    layer: usize,
    unit: usize,
    column: &[f64],
) -> f64 {
    let specs = net.layers();
    let last = specs.len() - 1;
    let act = specs[layer].activation;
    let delta: Vec<f64> = column
        .iter()
        .zip(post[layer].column(unit))
        .map(|(z, a)| activate(act, *z) - a)
        .collect();
    if layer == last {
        let base = (&post[last] * u).sum();
        return base
            + delta
                .iter()
                .zip(u.column(unit))
                .map(|(d, w)| d * w)
                .sum::<f64>();
    }
    let w_next = net.weights(layer + 1);
    let mut z = pre[layer + 1].clone();
    for (r, d) in delta.iter().enumerate() {
        for k in 0..z.ncols() {
            z[[r, k]] += d * w_next[[k, unit]];
        }
    }
    let mut a = z.mapv(|v| activate(specs[layer + 1].activation, v));
    for (l, spec) in specs.iter().enumerate().skip(layer + 2) {
        let mut z = a.dot(&net.weights(l).t());
        z += &net.bias(l);
        a = z.mapv(|v| activate(spec.activation, v));
    }
    (&a * u).sum()
}

/// Max relative error of the analytic parameter and input gradients of
/// `<u, net(x)>` against central differences.
pub fn gradient_check(net: &MlpNetwork, x: &Array2<f64>, u: &Array2<f64>) -> (f64, f64) {
    let (_, cache) = net.forward(x.view()).expect("forward");
    let gp = net.backward_params(&cache, u.view()).expect("backward");
    let gx = net.grad_input(&cache, u.view()).expect("grad input");
    let (pre, post) = (cache.pre_activations(), cache.activations());

    let mut param_err: f64 = 0.0;
    let mut k = 0;
    for (l, spec) in net.layers().iter().enumerate() {
        let input = if l == 0 { x } else { &post[l - 1] };
        let (w, b) = (net.weights(l), net.bias(l));
        // weights row-major (unit, input), then biases
        let targets = (0..spec.out_dim)
            .flat_map(|i| (0..spec.in_dim).map(move |j| (i, Some(j))))
            .chain((0..spec.out_dim).map(|i| (i, None)));
        for (i, j) in targets {
            let p = match j {
                Some(j) => w[[i, j]],
                None => b[i],
            };
            let h = FD_STEP * p.abs().max(1.0);
            let shifted = |dp: f64| -> Vec<f64> {
                (0..x.nrows())
                    .map(|r| pre[l][[r, i]] + dp * j.map_or(1.0, |j| input[[r, j]]))
                    .collect()
            };
            let up = perturbed_objective(net, pre, post, u, l, i, &shifted(h));
            let down = perturbed_objective(net, pre, post, u, l, i, &shifted(-h));
            param_err = param_err.max(rel_err(gp[k], (up - down) / (2.0 * h), GRAD_FLOOR));
            k += 1;
        }
    }
    assert_eq!(k, gp.len());

    let mut input_err: f64 = 0.0;
    let mut xp = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let v = x[[i, j]];
            let h = FD_STEP * v.abs().max(1.0);
            xp[[i, j]] = v + h;
            let up = objective(net, &xp, u);
            xp[[i, j]] = v - h;
            let down = objective(net, &xp, u);
            xp[[i, j]] = v;
            input_err = input_err.max(rel_err(gx[[i, j]], (up - down) / (2.0 * h), GRAD_FLOOR));
        }
    }
    (param_err, input_err)
}

/// Random inputs in `[-1, 1]` and standard-normal-ish upstream weights.
pub fn random_batch(
    rng: &mut ChaCha8Rng,
    rows: usize,
    in_dim: usize,
    out_dim: usize,
) -> (Array2<f64>, Array2<f64>) {
    let x = Array2::from_shape_fn((rows, in_dim), |_| rng.random_range(-1.0..1.0));
    let u = Array2::from_shape_fn((rows, out_dim), |_| rng.random_range(-1.0..1.0));
    (x, u)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub type FieldFn = Box<dyn Fn(&State, usize) -> State + Send + Sync>;
pub type ScalarFn = Box<dyn Fn(&State, usize) -> f64 + Send + Sync>;

/// Two-dimensional test environment on `[-1, 1]^2` with identity
/// representation, per-action state rates and closures for the rest.
pub struct StubEnv {
    pub n_actions: usize,
    pub rate: FieldFn,
    pub divergence: ScalarFn,
    pub reward: ScalarFn,
    pub p0: Box<dyn Fn(&State) -> f64 + Send + Sync>,
}

impl StubEnv {
    /// Nothing moves; constant reward; uniform `p0`.
    pub fn still(n_actions: usize, reward: f64) -> Self {
        Self {
            n_actions,
            rate: Box::new(|_, _| [0.0, 0.0]),
            divergence: Box::new(|_, _| 0.0),
            reward: Box::new(move |_, _| reward),
            p0: Box::new(|_| 0.25),
        }
    }
}

impl Environment for StubEnv {
    fn name(&self) -> &str {
        "stub"
    }
    fn n_actions(&self) -> usize {
        self.n_actions
    }
    fn repr_dim(&self) -> usize {
        2
    }
    fn bounds(&self) -> [(f64, f64); 2] {
        [(-1.0, 1.0), (-1.0, 1.0)]
    }
    fn rate(&self, s: &State, action: usize) -> Result<State> {
        Ok((self.rate)(s, action))
    }
    fn divergence(&self, s: &State, action: usize) -> f64 {
        (self.divergence)(s, action)
    }
    fn reward(&self, s: &State, action: usize) -> f64 {
        (self.reward)(s, action)
    }
    fn initial_density(&self, s: &State) -> f64 {
        (self.p0)(s)
    }
    fn sample_initial(&self, rng: &mut dyn RngCore) -> State {
        self.sample_state(rng)
    }
    fn sample_state(&self, rng: &mut dyn RngCore) -> State {
        let mut u = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
        [u(), u()]
    }
    fn representation(&self, s: &State, out: &mut [f64]) {
        out[0] = s[0];
        out[1] = s[1];
    }
    fn representation_jacobian(&self, _s: &State, out: &mut [f64]) {
        out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    }
    fn clip(&self, s: &State) -> State {
        [s[0].clamp(-1.0, 1.0), s[1].clamp(-1.0, 1.0)]
    }
}

/// Two-state tabular MDP on the corners `s1 in {0, 1}` of the unit square.
/// Action 0 stays, action 1 jumps to the other state in exactly one step
/// of length `dt`. The second coordinate is inert.
pub struct TwoStateEnv {
    pub rewards: [[f64; 2]; 2],
    pub dt: f64,
}

impl TwoStateEnv {
    fn index(s: &State) -> usize {
        usize::from(s[0] > 0.5)
    }
}

impl Environment for TwoStateEnv {
    fn name(&self) -> &str {
        "two-state"
    }
    fn n_actions(&self) -> usize {
        2
    }
    fn repr_dim(&self) -> usize {
        2
    }
    fn bounds(&self) -> [(f64, f64); 2] {
        [(0.0, 1.0), (0.0, 1.0)]
    }
    fn rate(&self, s: &State, action: usize) -> Result<State> {
        let x = Self::index(s) as f64;
        Ok(if action == 0 {
            [0.0, 0.0]
        } else {
            [(1.0 - 2.0 * x) / self.dt, 0.0]
        })
    }
    fn divergence(&self, _s: &State, _action: usize) -> f64 {
        0.0
    }
    fn reward(&self, s: &State, action: usize) -> f64 {
        self.rewards[Self::index(s)][action]
    }
    fn initial_density(&self, _s: &State) -> f64 {
        1.0
    }
    fn sample_initial(&self, rng: &mut dyn RngCore) -> State {
        [(rng.next_u64() & 1) as f64, 0.0]
    }
    fn sample_state(&self, rng: &mut dyn RngCore) -> State {
        self.sample_initial(rng)
    }
    fn representation(&self, s: &State, out: &mut [f64]) {
        out.copy_from_slice(s);
    }
    fn representation_jacobian(&self, _s: &State, out: &mut [f64]) {
        out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    }
    fn clip(&self, s: &State) -> State {
        [s[0].clamp(0.0, 1.0), s[1].clamp(0.0, 1.0)]
    }
}

/// Exact discounted values of the two-state MDP with per-step discount
/// `beta`, by enumerating the four deterministic policies and solving
/// `(I - beta P) V = R dt` for each. Returns the componentwise best.
pub fn two_state_oracle(rewards: [[f64; 2]; 2], dt: f64, beta: f64) -> [f64; 2] {
    let mut best = [f64::NEG_INFINITY; 2];
    for policy in 0..4usize {
        let a = [policy & 1, policy >> 1];
        // P[i][j] = 1 when action a[i] in state i leads to j
        let next = |i: usize| if a[i] == 0 { i } else { 1 - i };
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            m[i][i] += 1.0;
            m[i][next(i)] -= beta;
        }
        let r = [rewards[0][a[0]] * dt, rewards[1][a[1]] * dt];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let v = [
            (r[0] * m[1][1] - m[0][1] * r[1]) / det,
            (m[0][0] * r[1] - m[1][0] * r[0]) / det,
        ];
        for i in 0..2 {
            best[i] = best[i].max(v[i]);
        }
    }
    best
}

/// Five-point central difference of a scalar function.
pub fn fd5(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

/// Finite-difference divergence `d f0 / d s1 + d f1 / d s2` of a planar field.
pub fn fd_divergence(f: impl Fn(&State) -> State, s: &State, h: f64) -> f64 {
    fd5(|x| f(&[x, s[1]])[0], s[0], h) + fd5(|y| f(&[s[0], y])[1], s[1], h)
}

/// Value network that outputs `c` everywhere.
pub fn constant_net(specs: &[LayerSpec], c: f64) -> MlpNetwork {
    let n = MlpNetwork::zeros(specs).unwrap().num_params();
    let mut params = vec![0.0; n];
    params[n - 1] = c;
    MlpNetwork::from_params(specs, params).unwrap()
}

pub fn swirl(s: &State, a: usize) -> State {
    let a = a as f64;
    [
        0.3 * (s[0] + a).sin() + 0.2 * s[1],
        0.1 * (2.0 * s[1]).cos() + 0.4 * s[0] * a,
    ]
}

pub fn swirl_divergence(s: &State, a: usize) -> f64 {
    0.3 * (s[0] + a as f64).cos() - 0.2 * (2.0 * s[1]).sin()
}

pub fn swirl_env(n_actions: usize, reward: f64) -> StubEnv {
    StubEnv {
        rate: Box::new(swirl),
        divergence: Box::new(swirl_divergence),
        ..StubEnv::still(n_actions, reward)
    }
}

/// Smooth nets: tanh everywhere, exp head on the density.
pub fn smooth_nets(env: &dyn Environment, seed: u64) -> UmbrellaNets {
    let policy = MlpNetwork::init(
        &stack(
            2,
            12,
            3,
            env.n_actions(),
            Activation::Tanh,
            Activation::Identity,
        ),
        seed,
    )
    .unwrap();
    let value = MlpNetwork::init(
        &stack(2, 12, 3, 1, Activation::Tanh, Activation::Identity),
        seed + 1,
    )
    .unwrap();
    let density = MlpNetwork::init(
        &stack(2, 12, 3, 1, Activation::Tanh, Activation::Exp),
        seed + 2,
    )
    .unwrap();
    UmbrellaNets::from_networks(env, policy, value, density).unwrap()
}
