//! Fixed-step trajectory simulation and discounted-return evaluation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Environment, State, STATE_DIM};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::umbrella::{sample_categorical, UmbrellaNets};

/// Anything that maps a state to a distribution over discrete actions.
pub trait Policy {
    fn probabilities(&self, s: &State) -> Result<Vec<f64>>;

    fn action(&self, s: &State, rng: &mut dyn RngCore) -> Result<usize> {
        Ok(sample_categorical(&self.probabilities(s)?, rng))
    }
}

impl Policy for UmbrellaNets {
    fn probabilities(&self, s: &State) -> Result<Vec<f64>> {
        self.policy_distribution(s)
    }
}

/// Equal probability for every action.
#[derive(Clone, Copy, Debug)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl Policy for UniformPolicy {
    fn probabilities(&self, _s: &State) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.n_actions as f64; self.n_actions])
    }
}

/// Always the same action.
#[derive(Clone, Copy, Debug)]
pub struct FixedPolicy {
    pub action: usize,
    pub n_actions: usize,
}

impl Policy for FixedPolicy {
    fn probabilities(&self, _s: &State) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.n_actions];
        p[self.action] = 1.0;
        Ok(p)
    }

    fn action(&self, _s: &State, _rng: &mut dyn RngCore) -> Result<usize> {
        Ok(self.action)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutConfig {
    pub dt: f64,
    pub total_time: f64,
    pub n_runs: usize,
    /// Episodes averaged into each run's return.
    pub episodes_per_run: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl RolloutConfig {
    /// Evaluation horizon per environment: 100 for the mountain car, 200
    /// for the arm.
    pub fn for_env(name: &str) -> Self {
        Self {
            dt: 0.05,
            total_time: if name == "standup" { 200.0 } else { 100.0 },
            n_runs: 10,
            episodes_per_run: 1,
            gamma: 0.95,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("rollout.dt must be positive".into()));
        }
        if !(self.total_time >= self.dt && self.total_time.is_finite()) {
            return Err(Error::Config(
                "rollout.total_time must be at least rollout.dt".into(),
            ));
        }
        if self.n_runs == 0 {
            return Err(Error::Config("rollout.n_runs must be at least 1".into()));
        }
        if self.episodes_per_run == 0 {
            return Err(Error::Config(
                "rollout.episodes_per_run must be at least 1".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("rollout.gamma must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Number of steps `k` with `k * dt < T`.
    pub fn steps(&self) -> usize {
        let ratio = self.total_time / self.dt;
        let n = ratio.ceil();
        // guard against `T / dt` landing a hair above an integer
        if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
            ratio.round() as usize
        } else {
            n as usize
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `s_0 .. s_n`; one more entry than `actions`.
    pub states: Vec<State>,
    pub actions: Vec<usize>,
    pub discounted_return: f64,
    pub reached_reward: bool,
}

/// Explicit Euler rollout `s_{k+1} = clip(s_k + v(s_k, a_k) dt)` with
/// `J = sum_k gamma^(k dt) r(s_k, a_k) dt`.
pub fn simulate(
    env: &dyn Environment,
    policy: &dyn Policy,
    s0: State,
    cfg: &RolloutConfig,
    rng: &mut dyn RngCore,
) -> Result<Rollout> {
    let n = cfg.steps();
    let mut out = Rollout {
        states: Vec::with_capacity(n + 1),
        actions: Vec::with_capacity(n),
        discounted_return: 0.0,
        reached_reward: env.in_reward_region(&s0),
    };
    out.states.push(s0);
    let mut s = s0;
    let abort = |k: usize, e: Error| Error::RolloutAborted {
        steps: k,
        source: Box::new(e),
    };
    for k in 0..n {
        let a = policy.action(&s, rng).map_err(|e| abort(k, e))?;
        let v = env.rate(&s, a).map_err(|e| abort(k, e))?;
        let r = env.reward(&s, a);
        out.discounted_return += cfg.gamma.powf(k as f64 * cfg.dt) * r * cfg.dt;
        let mut next = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            next[i] = s[i] + v[i] * cfg.dt;
        }
        s = env.clip(&next);
        out.actions.push(a);
        out.states.push(s);
        out.reached_reward |= env.in_reward_region(&s);
    }
    Ok(out)
}

/// Seed of episode `episode` in run `run` under master seed `seed`.
pub fn episode_seed(seed: u64, run: usize, episode: usize) -> u64 {
    derive_seed(derive_seed(seed, run as u64), episode as u64)
}

/// One evaluation episode: start from a `p0` sample, then roll out, all
/// drawn from the episode's own stream.
pub fn simulate_episode(
    env: &dyn Environment,
    policy: &dyn Policy,
    cfg: &RolloutConfig,
    run: usize,
    episode: usize,
) -> Result<Rollout> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, run, episode));
    let s0 = env.sample_initial(&mut rng);
    simulate(env, policy, s0, cfg, &mut rng)
}

/// Mean return over the run's episodes and whether any of them reached the
/// reward region.
pub fn evaluate_run(
    env: &dyn Environment,
    policy: &dyn Policy,
    cfg: &RolloutConfig,
    run: usize,
) -> Result<(f64, bool)> {
    let mut total = 0.0;
    let mut reached = false;
    for episode in 0..cfg.episodes_per_run {
        let r = simulate_episode(env, policy, cfg, run, episode)?;
        total += r.discounted_return;
        reached |= r.reached_reward;
    }
    Ok((total / cfg.episodes_per_run as f64, reached))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStats {
    pub returns: Vec<f64>,
    pub successes: Vec<bool>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl RolloutStats {
    pub fn from_runs(returns: Vec<f64>, successes: Vec<bool>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = if returns.len() > 1 {
            (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            returns,
            successes,
            mean,
            std,
        }
    }

    pub fn success_fraction(&self) -> f64 {
        self.successes.iter().filter(|&&s| s).count() as f64 / self.successes.len() as f64
    }
}

pub fn evaluate(
    env: &dyn Environment,
    policy: &dyn Policy,
    cfg: &RolloutConfig,
) -> Result<RolloutStats> {
    cfg.validate()?;
    let mut returns = Vec::with_capacity(cfg.n_runs);
    let mut successes = Vec::with_capacity(cfg.n_runs);
    for run in 0..cfg.n_runs {
        let (ret, reached) = evaluate_run(env, policy, cfg, run)?;
        returns.push(ret);
        successes.push(reached);
    }
    Ok(RolloutStats::from_runs(returns, successes))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyMapRow {
    pub s1: f64,
    pub s2: f64,
    pub action: usize,
    pub probability: f64,
}

/// Evaluates the greedy action on a `res x res` grid spanning the
/// environment's bounding box. Ties go to the lowest action index.
pub fn export_policy_map(
    env: &dyn Environment,
    policy: &dyn Policy,
    res: usize,
) -> Result<Vec<PolicyMapRow>> {
    if res < 2 {
        return Err(Error::Usage(format!(
            "policy map resolution must be >= 2, got {res}"
        )));
    }
    let b = env.bounds();
    let coord = |k: usize, i: usize| b[k].0 + (b[k].1 - b[k].0) * i as f64 / (res - 1) as f64;
    let mut rows = Vec::with_capacity(res * res);
    for i in 0..res {
        for j in 0..res {
            let s = [coord(0, i), coord(1, j)];
            let probs = policy.probabilities(&s)?;
            let (action, probability) = argmax(&probs);
            rows.push(PolicyMapRow {
                s1: s[0],
                s2: s[1],
                action,
                probability,
            });
        }
    }
    Ok(rows)
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
