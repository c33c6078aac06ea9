use ndarray::Array2;

use super::{log_softmax, repr_batch, Hyperparams, UmbrellaNets};
use crate::env::{Environment, State, STATE_DIM};
use crate::error::{Error, Result};
use crate::mlp::{Backprop, ForwardCache};

/// One training batch: states from the covering distribution, one sampled
/// action each, and the per-sample advantage and growth rate.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSample {
    pub states: Vec<State>,
    pub actions: Vec<usize>,
    pub advantages: Vec<f64>,
    pub growth_rates: Vec<f64>,
    pub diagnostics: BatchDiagnostics,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchDiagnostics {
    pub mean_abs_advantage: f64,
    pub mean_abs_growth: f64,
    /// Mean of `-alpha_tilde * ln(p * pi)` over the batch.
    pub mean_entropy_reward: f64,
    pub mean_reward: f64,
}

/// Stochastic ascent directions for the three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub policy: Vec<f64>,
    pub value: Vec<f64>,
    pub density: Vec<f64>,
}

/// Forward and reverse passes of all three networks for a batch of
/// state-action pairs, plus the state gradients derived from them.
pub(crate) struct Passes {
    log_probs: Array2<f64>,
    policy_cache: ForwardCache,
    /// Reverse pass of `ln pi(a_i | s_i)`.
    policy_bp: Backprop,
    grad_log_pi: Vec<State>,
    value: Vec<f64>,
    value_cache: ForwardCache,
    value_bp: Backprop,
    grad_value: Vec<State>,
    log_density: Vec<f64>,
    density_cache: ForwardCache,
    /// Reverse pass of `ln p` (from the exp head's pre-activation).
    density_bp: Backprop,
    grad_log_density: Vec<State>,
}

/// Runs the policy network and returns its cache with row-wise log-probs.
pub(crate) fn policy_pass(
    nets: &UmbrellaNets,
    states: &[State],
) -> Result<(ForwardCache, Array2<f64>)> {
    let x = nets.policy_batch(states);
    let (logits, cache) = nets.policy.forward(x.view())?;
    let mut log_probs = Array2::zeros(logits.dim());
    for (mut out, row) in log_probs.rows_mut().into_iter().zip(logits.rows()) {
        let lp = log_softmax(row.as_slice().expect("row-major"))?;
        out.iter_mut().zip(lp).for_each(|(o, v)| *o = v);
    }
    Ok((cache, log_probs))
}

fn chain_representation(
    env: &dyn Environment,
    states: &[State],
    grad_h: &Array2<f64>,
) -> Vec<State> {
    let n_r = env.repr_dim();
    let mut jac = vec![0.0; n_r * STATE_DIM];
    states
        .iter()
        .zip(grad_h.rows())
        .map(|(s, gh)| {
            env.representation_jacobian(s, &mut jac);
            let mut g = [0.0; STATE_DIM];
            for (j, ghj) in gh.iter().enumerate() {
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk += ghj * jac[j * STATE_DIM + k];
                }
            }
            g
        })
        .collect()
}

pub(crate) fn run_passes(
    nets: &UmbrellaNets,
    env: &dyn Environment,
    states: &[State],
    actions: &[usize],
    policy: Option<(ForwardCache, Array2<f64>)>,
) -> Result<Passes> {
    let d = states.len();
    if d == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    if actions.len() != d {
        return Err(Error::Shape(format!(
            "{d} states but {} actions",
            actions.len()
        )));
    }
    let n_actions = env.n_actions();
    if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
        return Err(Error::Usage(format!(
            "action {a} out of range (n = {n_actions})"
        )));
    }

    let (policy_cache, log_probs) = match policy {
        Some(p) => p,
        None => policy_pass(nets, states)?,
    };
    // d ln softmax_a / d logits = e_a - pi
    let mut upstream = log_probs.mapv(|lp| -lp.exp());
    for (mut row, &a) in upstream.rows_mut().into_iter().zip(actions) {
        row[a] += 1.0;
    }
    let policy_bp = nets.policy.backprop(&policy_cache, upstream.view())?;
    let gx = nets.policy.input_gradient(&policy_bp)?;
    let scale = nets.policy_input_scale();
    let grad_log_pi = gx
        .rows()
        .into_iter()
        .map(|r| [r[0] * scale[0], r[1] * scale[1]])
        .collect();

    let h = repr_batch(env, states);
    let ones = Array2::ones((d, 1));

    let (v, value_cache) = nets.value.forward(h.view())?;
    let value_bp = nets.value.backprop(&value_cache, ones.view())?;
    let grad_value = chain_representation(env, states, &nets.value.input_gradient(&value_bp)?);

    let (_, density_cache) = nets.density.forward(h.view())?;
    let log_density = density_cache.output_pre_activation().column(0).to_vec();
    let density_bp = nets
        .density
        .backprop_from_pre_activation(&density_cache, ones.view())?;
    let grad_log_density =
        chain_representation(env, states, &nets.density.input_gradient(&density_bp)?);

    Ok(Passes {
        log_probs,
        policy_cache,
        policy_bp,
        grad_log_pi,
        value: v.column(0).to_vec(),
        value_cache,
        value_bp,
        grad_value,
        log_density,
        density_cache,
        density_bp,
        grad_log_density,
    })
}

fn dot(a: &State, b: &State) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample quantities built from the passes.
pub(crate) fn assemble(
    passes: &Passes,
    env: &dyn Environment,
    hp: &Hyperparams,
    states: Vec<State>,
    actions: Vec<usize>,
) -> Result<BatchSample> {
    let d = states.len();
    let ln_gamma = hp.gamma.ln();
    let decay = ln_gamma.abs();
    let ln_floor = hp.log_floor.ln();
    let mut advantages = Vec::with_capacity(d);
    let mut growth_rates = Vec::with_capacity(d);
    let mut diag = BatchDiagnostics::default();
    for i in 0..d {
        let (s, a) = (&states[i], actions[i]);
        let rate = env.rate(s, a)?;
        let reward = env.reward(s, a);
        let ln_p = passes.log_density[i];
        let ln_pi = passes.log_probs[[i, a]];
        let entropy_reward = -hp.alpha_tilde * (ln_p + ln_pi).max(ln_floor);
        let r_u = reward + entropy_reward;
        let adv = r_u + dot(&rate, &passes.grad_value[i]) - decay * passes.value[i];

        let p = ln_p.exp();
        let mut grad_ln = passes.grad_log_pi[i];
        grad_ln[0] += passes.grad_log_density[i][0];
        grad_ln[1] += passes.grad_log_density[i][1];
        let transport = p * (env.divergence(s, a) + dot(&rate, &grad_ln));
        let growth = ln_gamma * (p - env.initial_density(s)) - transport;

        if !adv.is_finite() || !growth.is_finite() {
            return Err(Error::Numeric(format!(
                "sample {i} at state {s:?}, action {a}: advantage {adv}, growth {growth} \
                 (V = {}, ln p = {ln_p}, ln pi = {ln_pi})",
                passes.value[i]
            )));
        }
        diag.mean_abs_advantage += adv.abs();
        diag.mean_abs_growth += growth.abs();
        diag.mean_entropy_reward += entropy_reward;
        diag.mean_reward += reward;
        advantages.push(adv);
        growth_rates.push(growth);
    }
    let n = d as f64;
    diag.mean_abs_advantage /= n;
    diag.mean_abs_growth /= n;
    diag.mean_entropy_reward /= n;
    diag.mean_reward /= n;
    Ok(BatchSample {
        states,
        actions,
        advantages,
        growth_rates,
        diagnostics: diag,
    })
}

/// Batch means of `grad ln pi * A`, `grad V * A` and `grad ln p * G`, with
/// `A` and `G` held fixed.
pub(crate) fn gradients_from(
    nets: &UmbrellaNets,
    passes: &Passes,
    advantages: &[f64],
    growth_rates: &[f64],
) -> Result<Gradients> {
    let n = advantages.len() as f64;
    let adv_w: Vec<f64> = advantages.iter().map(|a| a / n).collect();
    let growth_w: Vec<f64> = growth_rates.iter().map(|g| g / n).collect();
    Ok(Gradients {
        policy: nets.policy.param_gradient(
            &passes.policy_cache,
            &passes.policy_bp,
            Some(&adv_w),
        )?,
        value: nets
            .value
            .param_gradient(&passes.value_cache, &passes.value_bp, Some(&adv_w))?,
        density: nets.density.param_gradient(
            &passes.density_cache,
            &passes.density_bp,
            Some(&growth_w),
        )?,
    })
}

/// Evaluates advantages and growth rates for given state-action pairs.
pub fn evaluate_batch(
    nets: &UmbrellaNets,
    env: &dyn Environment,
    states: Vec<State>,
    actions: Vec<usize>,
    hp: &Hyperparams,
) -> Result<BatchSample> {
    let passes = run_passes(nets, env, &states, &actions, None)?;
    assemble(&passes, env, hp, states, actions)
}

/// Gradient estimates for a populated batch. The batch's advantages and
/// growth rates enter as constants.
pub fn estimate_gradients(
    nets: &UmbrellaNets,
    env: &dyn Environment,
    batch: &BatchSample,
    _hp: &Hyperparams,
) -> Result<Gradients> {
    let d = batch.states.len();
    if d == 0 {
        return Err(Error::Usage(
            "cannot estimate gradients from an empty batch".into(),
        ));
    }
    if batch.advantages.len() != d || batch.growth_rates.len() != d {
        return Err(Error::Shape(format!(
            "batch has {d} states, {} advantages, {} growth rates",
            batch.advantages.len(),
            batch.growth_rates.len()
        )));
    }
    let passes = run_passes(nets, env, &batch.states, &batch.actions, None)?;
    gradients_from(nets, &passes, &batch.advantages, &batch.growth_rates)
}

/// `r(s,a) - alpha_tilde * ln(max(p(s) pi(a|s), floor))`. The logarithm is
/// a plain number here: nothing differentiates through it.
pub fn effective_reward(
    nets: &UmbrellaNets,
    env: &dyn Environment,
    s: &State,
    action: usize,
    hp: &Hyperparams,
) -> Result<f64> {
    let probs = nets.policy_distribution(s)?;
    let pi = *probs
        .get(action)
        .ok_or_else(|| Error::Usage(format!("action {action} out of range")))?;
    let p = nets.density_at(env, s)?;
    Ok(env.reward(s, action) - hp.alpha_tilde * (p * pi).max(hp.log_floor).ln())
}

/// `A = r_u + v . grad V - |ln gamma| V` at one state-action pair.
pub fn advantage(
    nets: &UmbrellaNets,
    env: &dyn Environment,
    s: &State,
    action: usize,
    hp: &Hyperparams,
) -> Result<f64> {
    let batch = evaluate_batch(nets, env, vec![*s], vec![action], hp)?;
    Ok(batch.advantages[0])
}

/// `p(s) [div v + v . grad ln(pi p)]` for one action: a single-action
/// estimate of the divergence of the density flux.
pub fn transport_term(
    nets: &UmbrellaNets,
    env: &dyn Environment,
    s: &State,
    action: usize,
) -> Result<f64> {
    let passes = run_passes(nets, env, &[*s], &[action], None)?;
    let rate = env.rate(s, action)?;
    let p = passes.log_density[0].exp();
    let g = [
        passes.grad_log_pi[0][0] + passes.grad_log_density[0][0],
        passes.grad_log_pi[0][1] + passes.grad_log_density[0][1],
    ];
    Ok(p * (env.divergence(s, action) + dot(&rate, &g)))
}

/// Residual of the stationary density equation at `s`, oriented so that
/// gradient ascent on `ln p` with this weight relaxes `p` toward the
/// stationary solution:
/// `G = ln(gamma) (p - p0) - mean_a p [div v + v . grad ln(pi p)]`.
pub fn growth_rate(
    nets: &UmbrellaNets,
    env: &dyn Environment,
    s: &State,
    actions: &[usize],
    hp: &Hyperparams,
) -> Result<f64> {
    if actions.is_empty() {
        return Err(Error::Usage(
            "growth rate needs at least one action sample".into(),
        ));
    }
    let states = vec![*s; actions.len()];
    let batch = evaluate_batch(nets, env, states, actions.to_vec(), hp)?;
    let n = actions.len() as f64;
    Ok(batch.growth_rates.iter().sum::<f64>() / n)
}

impl BatchSample {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Splits off one sample as its own batch (diagnostics recomputed).
    pub fn single(&self, i: usize) -> BatchSample {
        BatchSample {
            states: vec![self.states[i]],
            actions: vec![self.actions[i]],
            advantages: vec![self.advantages[i]],
            growth_rates: vec![self.growth_rates[i]],
            diagnostics: BatchDiagnostics {
                mean_abs_advantage: self.advantages[i].abs(),
                mean_abs_growth: self.growth_rates[i].abs(),
                ..Default::default()
            },
        }
    }
}
