//! The ensemble trainer: policy, value and averaged-density networks, the
//! per-sample advantage and growth rate, and the training loop.

mod estimate;
mod trainer;

use ndarray::Array2;
use rand::RngCore;

pub use estimate::{
    advantage, effective_reward, estimate_gradients, evaluate_batch, growth_rate, transport_term,
    BatchDiagnostics, BatchSample, Gradients,
};
pub use trainer::{
    train_loop, train_step, AdamStates, IntervalStats, MetricRow, StepDiagnostics, Trainer,
    TRAINER_CHECKPOINT_HEADER,
};

use crate::env::{Environment, State, STATE_DIM};
use crate::error::{Error, Result};
use crate::mlp::{self, Activation, AdamConfig, MlpNetwork};
use crate::seeds::derive_seed;

/// Training hyperparameters. `alpha_tilde = 0` is the no-entropy ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub gamma: f64,
    pub alpha_tilde: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub lr_density: f64,
    pub wd_policy: f64,
    pub wd_value: f64,
    pub wd_density: f64,
    /// Floor applied to `p * pi` before taking its logarithm.
    pub log_floor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::mvmc()
    }
}

impl Hyperparams {
    fn common() -> Self {
        Self {
            gamma: 0.95,
            alpha_tilde: 1e-2,
            batch_size: 10_000,
            iterations: 1_200_000,
            lr_policy: 1e-5,
            lr_value: 1e-5,
            lr_density: 1e-5,
            wd_policy: 0.0,
            wd_value: 0.0,
            wd_density: 0.0,
            log_floor: 1e-30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }

    /// Full-budget settings for the mountain car.
    pub fn mvmc() -> Self {
        Self {
            wd_policy: 5e-6,
            wd_value: 1e-4,
            wd_density: 5e-4,
            ..Self::common()
        }
    }

    /// Full-budget settings for the stand-up arm.
    pub fn standup() -> Self {
        Self {
            lr_policy: 1e-6,
            lr_value: 1e-6,
            lr_density: 1e-7,
            wd_policy: 5e-5,
            wd_value: 1e-5,
            wd_density: 5e-4,
            ..Self::common()
        }
    }

    pub fn for_env(name: &str) -> Result<Self> {
        match name {
            "mvmc" => Ok(Self::mvmc()),
            "standup" => Ok(Self::standup()),
            other => Err(Error::Config(format!(
                "no defaults for environment `{other}`"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("umbrella.gamma must lie in (0, 1)");
        }
        if !(self.alpha_tilde >= 0.0 && self.alpha_tilde.is_finite()) {
            return bad("umbrella.alpha_tilde must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("umbrella.batch_size must be positive");
        }
        for (name, lr) in [
            ("umbrella.lr_policy", self.lr_policy),
            ("umbrella.lr_value", self.lr_value),
            ("umbrella.lr_density", self.lr_density),
            ("umbrella.wd_policy", self.wd_policy),
            ("umbrella.wd_value", self.wd_value),
            ("umbrella.wd_density", self.wd_density),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.log_floor > 0.0) {
            return bad("umbrella.log_floor must be positive");
        }
        if !(self.adam_beta1 >= 0.0
            && self.adam_beta1 < 1.0
            && self.adam_beta2 >= 0.0
            && self.adam_beta2 < 1.0)
        {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("umbrella.adam_epsilon must be positive");
        }
        Ok(())
    }

    /// `|ln gamma|`
    pub fn decay_rate(&self) -> f64 {
        self.gamma.ln().abs()
    }

    fn adam(&self, lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            weight_decay: wd,
        }
    }

    pub fn adam_policy(&self) -> AdamConfig {
        self.adam(self.lr_policy, self.wd_policy)
    }

    pub fn adam_value(&self) -> AdamConfig {
        self.adam(self.lr_value, self.wd_value)
    }

    pub fn adam_density(&self) -> AdamConfig {
        self.adam(self.lr_density, self.wd_density)
    }
}

/// Width and number of linear layers shared by all three networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkShape {
    pub width: usize,
    pub depth: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            width: 128,
            depth: 3,
        }
    }
}

impl NetworkShape {
    pub fn policy_specs(&self, env: &dyn Environment) -> Vec<mlp::LayerSpec> {
        mlp::stack(
            STATE_DIM,
            self.width,
            self.depth,
            env.n_actions(),
            Activation::Tanh,
            Activation::Identity,
        )
    }

    pub fn value_specs(&self, env: &dyn Environment) -> Vec<mlp::LayerSpec> {
        mlp::stack(
            env.repr_dim(),
            self.width,
            self.depth,
            1,
            Activation::Elu,
            Activation::Identity,
        )
    }

    pub fn density_specs(&self, env: &dyn Environment) -> Vec<mlp::LayerSpec> {
        mlp::stack(
            env.repr_dim(),
            self.width,
            self.depth,
            1,
            Activation::Elu,
            Activation::Exp,
        )
    }
}

/// Policy logits over the (rescaled) raw state; value and density over the
/// environment's boundary representation.
#[derive(Clone, Debug, PartialEq)]
pub struct UmbrellaNets {
    pub policy: MlpNetwork,
    pub value: MlpNetwork,
    pub density: MlpNetwork,
    input_center: State,
    input_scale: State,
}

impl UmbrellaNets {
    pub fn new(env: &dyn Environment, shape: NetworkShape, seed: u64) -> Result<Self> {
        Self::from_networks(
            env,
            MlpNetwork::init(&shape.policy_specs(env), derive_seed(seed, 1))?,
            MlpNetwork::init(&shape.value_specs(env), derive_seed(seed, 2))?,
            MlpNetwork::init(&shape.density_specs(env), derive_seed(seed, 3))?,
        )
    }

    /// All parameters zero: uniform policy, `V = 0`, `p = 1`.
    pub fn zeros(env: &dyn Environment, shape: NetworkShape) -> Result<Self> {
        Self::from_networks(
            env,
            MlpNetwork::zeros(&shape.policy_specs(env))?,
            MlpNetwork::zeros(&shape.value_specs(env))?,
            MlpNetwork::zeros(&shape.density_specs(env))?,
        )
    }

    pub fn from_networks(
        env: &dyn Environment,
        policy: MlpNetwork,
        value: MlpNetwork,
        density: MlpNetwork,
    ) -> Result<Self> {
        if policy.input_dim() != STATE_DIM || policy.output_dim() != env.n_actions() {
            return Err(Error::Shape(format!(
                "policy maps {} -> {}, environment needs {} -> {}",
                policy.input_dim(),
                policy.output_dim(),
                STATE_DIM,
                env.n_actions()
            )));
        }
        for (name, net) in [("value", &value), ("density", &density)] {
            if net.input_dim() != env.repr_dim() || net.output_dim() != 1 {
                return Err(Error::Shape(format!(
                    "{name} network maps {} -> {}, expected {} -> 1",
                    net.input_dim(),
                    net.output_dim(),
                    env.repr_dim()
                )));
            }
        }
        let last = density.layers()[density.layers().len() - 1];
        if last.activation != Activation::Exp {
            return Err(Error::Config(
                "density network must end in an exp head".into(),
            ));
        }
        let bounds = env.bounds();
        let mut input_center = [0.0; STATE_DIM];
        let mut input_scale = [0.0; STATE_DIM];
        for (k, (lo, hi)) in bounds.iter().enumerate() {
            input_center[k] = 0.5 * (lo + hi);
            input_scale[k] = 2.0 / (hi - lo);
        }
        Ok(Self {
            policy,
            value,
            density,
            input_center,
            input_scale,
        })
    }

    /// Affine map of the state box onto `[-1, 1]^2` used as policy input.
    pub fn policy_input(&self, s: &State) -> State {
        let mut out = [0.0; STATE_DIM];
        for k in 0..STATE_DIM {
            out[k] = (s[k] - self.input_center[k]) * self.input_scale[k];
        }
        out
    }

    pub(crate) fn policy_input_scale(&self) -> &State {
        &self.input_scale
    }

    pub(crate) fn policy_batch(&self, states: &[State]) -> Array2<f64> {
        let mut x = Array2::zeros((states.len(), STATE_DIM));
        for (mut row, s) in x.rows_mut().into_iter().zip(states) {
            let p = self.policy_input(s);
            row[0] = p[0];
            row[1] = p[1];
        }
        x
    }

    /// `pi(.|s)`: softmax of the policy logits.
    pub fn policy_distribution(&self, s: &State) -> Result<Vec<f64>> {
        let x = self.policy_batch(std::slice::from_ref(s));
        let (logits, _) = self.policy.forward(x.view())?;
        let row: Vec<f64> = logits.row(0).to_vec();
        let log_probs = log_softmax(&row)?;
        Ok(log_probs.into_iter().map(f64::exp).collect())
    }

    pub fn sample_action(&self, s: &State, rng: &mut dyn RngCore) -> Result<usize> {
        let probs = self.policy_distribution(s)?;
        Ok(sample_categorical(&probs, rng))
    }

    pub fn value_at(&self, env: &dyn Environment, s: &State) -> Result<f64> {
        let h = repr_batch(env, std::slice::from_ref(s));
        let (v, _) = self.value.forward(h.view())?;
        Ok(v[[0, 0]])
    }

    pub fn density_at(&self, env: &dyn Environment, s: &State) -> Result<f64> {
        let h = repr_batch(env, std::slice::from_ref(s));
        let (p, _) = self.density.forward(h.view())?;
        Ok(p[[0, 0]])
    }
}

pub(crate) fn repr_batch(env: &dyn Environment, states: &[State]) -> Array2<f64> {
    let n_r = env.repr_dim();
    let mut h = Array2::zeros((states.len(), n_r));
    for (mut row, s) in h.rows_mut().into_iter().zip(states) {
        env.representation(s, row.as_slice_mut().expect("row-major"));
    }
    h
}

/// Numerically stable log-softmax of one logit row.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric(format!("policy logits {logits:?}")));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_sum = sum.ln();
    Ok(logits.iter().map(|l| (l - max) - log_sum).collect())
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u = crate::env::uniform(rng, 0.0, 1.0);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MountainCar, StandUp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_policy_is_uniform() {
        let env = StandUp::default();
        let nets = UmbrellaNets::zeros(&env, NetworkShape { width: 8, depth: 3 }).unwrap();
        let p = nets.policy_distribution(&[1.0, 0.2]).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        for l in [-700.0, 0.0, 3.5, 800.0] {
            let lp = log_softmax(&[l, l]).unwrap();
            assert_eq!(
                lp.iter().map(|v| v.exp()).collect::<Vec<_>>(),
                vec![0.5, 0.5]
            );
        }
        assert!(log_softmax(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn random_policies_normalize() {
        let env = MountainCar::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for seed in 0..20 {
            let nets = UmbrellaNets::new(
                &env,
                NetworkShape {
                    width: 16,
                    depth: 3,
                },
                seed,
            )
            .unwrap();
            let s = env.sample_state(&mut rng);
            let p = nets.policy_distribution(&s).unwrap();
            assert!(p.iter().all(|&v| v > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn near_one_hot_distribution_picks_its_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probs = [1e-13, 1.0 - 2e-13, 1e-13];
        for _ in 0..10_000 {
            assert_eq!(sample_categorical(&probs, &mut rng), 1);
        }
    }

    #[test]
    fn uniform_sampling_frequencies_within_three_sigma() {
        let env = StandUp::default();
        let nets = UmbrellaNets::zeros(&env, NetworkShape { width: 4, depth: 2 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut counts = [0usize; 4];
        let probs = nets.policy_distribution(&[1.0, 0.0]).unwrap();
        for _ in 0..n {
            counts[sample_categorical(&probs, &mut rng)] += 1;
        }
        let p = 0.25;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let env = MountainCar::default();
        let nets = UmbrellaNets::new(&env, NetworkShape { width: 8, depth: 3 }, 5).unwrap();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            (0..50)
                .map(|i| {
                    nets.sample_action(&[0.01 * i as f64, 0.0], &mut rng)
                        .unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn hyperparam_validation() {
        let mut hp = Hyperparams::mvmc();
        hp.validate().unwrap();
        hp.gamma = 1.0;
        assert!(hp.validate().is_err());
        let mut hp = Hyperparams::standup();
        hp.alpha_tilde = -0.1;
        assert!(hp.validate().is_err());
    }

    #[test]
    fn mismatched_networks_are_rejected() {
        let env = MountainCar::default();
        let other = StandUp::default();
        let shape = NetworkShape { width: 4, depth: 2 };
        let nets = UmbrellaNets::zeros(&other, shape).unwrap();
        let err = UmbrellaNets::from_networks(&env, nets.policy, nets.value, nets.density);
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}
