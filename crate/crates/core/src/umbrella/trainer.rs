use std::path::Path;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::estimate::{assemble, gradients_from, policy_pass, run_passes};
use super::{sample_categorical, BatchDiagnostics, Hyperparams, NetworkShape, UmbrellaNets};
use crate::env::{make_env, EnvOverrides, Environment, State};
use crate::error::{Error, Result};
use crate::mlp::codec::{decode_adam, decode_network, encode_adam, encode_network, Record};
use crate::mlp::{adam_step, AdamState, Direction};
use crate::seeds::derive_seed;

pub const TRAINER_CHECKPOINT_HEADER: &str = "umbrella-trainer 1";

/// One Adam state per network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamStates {
    pub policy: AdamState,
    pub value: AdamState,
    pub density: AdamState,
}

impl AdamStates {
    pub fn new(nets: &UmbrellaNets, hp: &Hyperparams) -> Self {
        Self {
            policy: AdamState::new(nets.policy.num_params(), hp.adam_policy()),
            value: AdamState::new(nets.value.num_params(), hp.adam_value()),
            density: AdamState::new(nets.density.num_params(), hp.adam_density()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub batch: BatchDiagnostics,
    pub policy_grad_norm: f64,
    pub value_grad_norm: f64,
    pub density_grad_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One training iteration: sample states and actions, evaluate `A` and `G`,
/// then take an Adam ascent step on each network.
pub fn train_step(
    nets: &mut UmbrellaNets,
    env: &dyn Environment,
    hp: &Hyperparams,
    rng: &mut dyn RngCore,
    adam: &mut AdamStates,
) -> Result<StepDiagnostics> {
    let states: Vec<State> = (0..hp.batch_size).map(|_| env.sample_state(rng)).collect();
    let (cache, log_probs) = policy_pass(nets, &states)?;
    let mut probs = vec![0.0; env.n_actions()];
    let actions: Vec<usize> = log_probs
        .rows()
        .into_iter()
        .map(|row| {
            probs.iter_mut().zip(row).for_each(|(p, lp)| *p = lp.exp());
            sample_categorical(&probs, rng)
        })
        .collect();
    let passes = run_passes(nets, env, &states, &actions, Some((cache, log_probs)))?;
    let batch = assemble(&passes, env, hp, states, actions)?;
    let grads = gradients_from(nets, &passes, &batch.advantages, &batch.growth_rates)?;
    drop(passes);

    adam_step(
        &mut nets.policy,
        &grads.policy,
        &mut adam.policy,
        Direction::Ascent,
    )?;
    adam_step(
        &mut nets.value,
        &grads.value,
        &mut adam.value,
        Direction::Ascent,
    )?;
    adam_step(
        &mut nets.density,
        &grads.density,
        &mut adam.density,
        Direction::Ascent,
    )?;

    for (name, net) in [
        ("policy", &nets.policy),
        ("value", &nets.value),
        ("density", &nets.density),
    ] {
        if let Some(i) = net.params().iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!(
                "{name} parameter {i} became non-finite after an update"
            )));
        }
    }
    Ok(StepDiagnostics {
        batch: batch.diagnostics,
        policy_grad_norm: norm(&grads.policy),
        value_grad_norm: norm(&grads.value),
        density_grad_norm: norm(&grads.density),
    })
}

/// Everything needed to continue a training run bit-exactly.
pub struct Trainer {
    env_name: String,
    overrides: EnvOverrides,
    env: Arc<dyn Environment>,
    pub hp: Hyperparams,
    pub shape: NetworkShape,
    pub nets: UmbrellaNets,
    pub adam: AdamStates,
    rng: ChaCha8Rng,
    iteration: u64,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("env", &self.env_name)
            .field("iteration", &self.iteration)
            .field("hp", &self.hp)
            .field("shape", &self.shape)
            .finish_non_exhaustive()
    }
}

impl Trainer {
    pub fn new(
        env_name: &str,
        overrides: EnvOverrides,
        hp: Hyperparams,
        shape: NetworkShape,
    ) -> Result<Self> {
        hp.validate()?;
        let env: Arc<dyn Environment> = make_env(env_name, &overrides)?.into();
        let nets = UmbrellaNets::new(env.as_ref(), shape, hp.seed)?;
        let adam = AdamStates::new(&nets, &hp);
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(hp.seed, 4));
        Ok(Self {
            env_name: env_name.to_string(),
            overrides,
            env,
            hp,
            shape,
            nets,
            adam,
            rng,
            iteration: 0,
        })
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn env_arc(&self) -> Arc<dyn Environment> {
        Arc::clone(&self.env)
    }

    pub fn env_name(&self) -> &str {
        &self.env_name
    }

    pub fn overrides(&self) -> &EnvOverrides {
        &self.overrides
    }

    /// Completed training iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn step(&mut self) -> Result<StepDiagnostics> {
        let d = train_step(
            &mut self.nets,
            self.env.as_ref(),
            &self.hp,
            &mut self.rng,
            &mut self.adam,
        )?;
        self.iteration += 1;
        Ok(d)
    }

    pub fn to_checkpoint(&self) -> String {
        let mut rec = Record::new();
        rec.push("env.name", self.env_name.clone());
        let o = &self.overrides;
        for (key, v) in [
            ("env.gravity", o.gravity),
            ("env.force", o.force),
            ("env.torque", o.torque),
            ("env.delta", o.delta),
        ] {
            if let Some(v) = v {
                rec.push_f64(key, v);
            }
        }
        encode_hyperparams(&mut rec, &self.hp);
        rec.push_u64("network.width", self.shape.width as u64);
        rec.push_u64("network.depth", self.shape.depth as u64);
        rec.push_u64("iteration", self.iteration);
        rec.push("rng.seed", hex(&self.rng.get_seed()));
        rec.push_u64("rng.stream", self.rng.get_stream());
        rec.push("rng.word_pos", format!("{:032x}", self.rng.get_word_pos()));
        encode_network(&mut rec, "policy", &self.nets.policy);
        encode_network(&mut rec, "value", &self.nets.value);
        encode_network(&mut rec, "density", &self.nets.density);
        encode_adam(&mut rec, "adam.policy", &self.adam.policy);
        encode_adam(&mut rec, "adam.value", &self.adam.value);
        encode_adam(&mut rec, "adam.density", &self.adam.density);
        rec.to_text(TRAINER_CHECKPOINT_HEADER)
    }

    pub fn from_checkpoint(text: &str, origin: &Path) -> Result<Self> {
        let rec = Record::from_text(text, TRAINER_CHECKPOINT_HEADER, origin)?;
        let integrity = |reason: String| Error::Integrity {
            path: origin.to_path_buf(),
            reason,
        };
        let opt = |key: &str| -> Result<Option<f64>> {
            if rec.entries().iter().any(|(k, _)| k == key) {
                Ok(Some(rec.get_f64(key)?))
            } else {
                Ok(None)
            }
        };
        let overrides = EnvOverrides {
            gravity: opt("env.gravity")?,
            force: opt("env.force")?,
            torque: opt("env.torque")?,
            delta: opt("env.delta")?,
        };
        let env_name = rec.get("env.name")?.to_string();
        let env: Arc<dyn Environment> = make_env(&env_name, &overrides)?.into();
        let hp = decode_hyperparams(&rec)?;
        let shape = NetworkShape {
            width: rec.get_u64("network.width")? as usize,
            depth: rec.get_u64("network.depth")? as usize,
        };
        let nets = UmbrellaNets::from_networks(
            env.as_ref(),
            decode_network(&rec, "policy")?,
            decode_network(&rec, "value")?,
            decode_network(&rec, "density")?,
        )?;
        let adam = AdamStates {
            policy: decode_adam(&rec, "adam.policy")?,
            value: decode_adam(&rec, "adam.value")?,
            density: decode_adam(&rec, "adam.density")?,
        };
        for (name, st, net) in [
            ("policy", &adam.policy, &nets.policy),
            ("value", &adam.value, &nets.value),
            ("density", &adam.density, &nets.density),
        ] {
            let n = net.num_params();
            if st.first_moment.len() != n || st.second_moment.len() != n {
                return Err(integrity(format!(
                    "{name} optimizer moments do not match {n} parameters"
                )));
            }
        }
        let seed = unhex(rec.get("rng.seed")?)
            .and_then(|b| <[u8; 32]>::try_from(b).ok())
            .ok_or_else(|| integrity("malformed rng.seed".into()))?;
        let word_pos = u128::from_str_radix(rec.get("rng.word_pos")?, 16)
            .map_err(|e| integrity(format!("malformed rng.word_pos: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(rec.get_u64("rng.stream")?);
        rng.set_word_pos(word_pos);
        Ok(Self {
            env_name,
            overrides,
            env,
            hp,
            shape,
            nets,
            adam,
            rng,
            iteration: rec.get_u64("iteration")?,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

fn encode_hyperparams(rec: &mut Record, hp: &Hyperparams) {
    rec.push_f64("hp.gamma", hp.gamma);
    rec.push_f64("hp.alpha_tilde", hp.alpha_tilde);
    rec.push_u64("hp.batch_size", hp.batch_size as u64);
    rec.push_u64("hp.iterations", hp.iterations);
    rec.push_f64("hp.lr_policy", hp.lr_policy);
    rec.push_f64("hp.lr_value", hp.lr_value);
    rec.push_f64("hp.lr_density", hp.lr_density);
    rec.push_f64("hp.wd_policy", hp.wd_policy);
    rec.push_f64("hp.wd_value", hp.wd_value);
    rec.push_f64("hp.wd_density", hp.wd_density);
    rec.push_f64("hp.log_floor", hp.log_floor);
    rec.push_f64("hp.adam_beta1", hp.adam_beta1);
    rec.push_f64("hp.adam_beta2", hp.adam_beta2);
    rec.push_f64("hp.adam_epsilon", hp.adam_epsilon);
    rec.push_u64("hp.seed", hp.seed);
}

fn decode_hyperparams(rec: &Record) -> Result<Hyperparams> {
    Ok(Hyperparams {
        gamma: rec.get_f64("hp.gamma")?,
        alpha_tilde: rec.get_f64("hp.alpha_tilde")?,
        batch_size: rec.get_u64("hp.batch_size")? as usize,
        iterations: rec.get_u64("hp.iterations")?,
        lr_policy: rec.get_f64("hp.lr_policy")?,
        lr_value: rec.get_f64("hp.lr_value")?,
        lr_density: rec.get_f64("hp.lr_density")?,
        wd_policy: rec.get_f64("hp.wd_policy")?,
        wd_value: rec.get_f64("hp.wd_value")?,
        wd_density: rec.get_f64("hp.wd_density")?,
        log_floor: rec.get_f64("hp.log_floor")?,
        adam_beta1: rec.get_f64("hp.adam_beta1")?,
        adam_beta2: rec.get_f64("hp.adam_beta2")?,
        adam_epsilon: rec.get_f64("hp.adam_epsilon")?,
        seed: rec.get_u64("hp.seed")?,
    })
}

/// Training diagnostics averaged over the steps since the previous callback.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IntervalStats {
    /// Completed iterations when the callback fired.
    pub iteration: u64,
    pub steps: u64,
    pub mean_abs_advantage: f64,
    pub mean_abs_growth: f64,
    pub mean_entropy_reward: f64,
    pub mean_reward: f64,
}

impl IntervalStats {
    fn add(&mut self, d: &StepDiagnostics) {
        self.steps += 1;
        self.mean_abs_advantage += d.batch.mean_abs_advantage;
        self.mean_abs_growth += d.batch.mean_abs_growth;
        self.mean_entropy_reward += d.batch.mean_entropy_reward;
        self.mean_reward += d.batch.mean_reward;
    }

    fn finish(mut self, iteration: u64) -> Self {
        self.iteration = iteration;
        if self.steps > 0 {
            let n = self.steps as f64;
            self.mean_abs_advantage /= n;
            self.mean_abs_growth /= n;
            self.mean_entropy_reward /= n;
            self.mean_reward /= n;
        }
        self
    }
}

/// Runs the trainer until `hp.iterations`, calling `on_interval` every
/// `interval` completed iterations and once more at the end if the last
/// interval is partial. Returns every emitted [`IntervalStats`].
pub fn train_loop<F>(
    trainer: &mut Trainer,
    interval: u64,
    mut on_interval: F,
) -> Result<Vec<IntervalStats>>
where
    F: FnMut(&Trainer, &IntervalStats) -> Result<()>,
{
    if interval == 0 {
        return Err(Error::Config("metrics interval must be positive".into()));
    }
    let mut history = Vec::new();
    let mut acc = IntervalStats::default();
    while trainer.iteration() < trainer.hp.iterations {
        let d = trainer.step()?;
        acc.add(&d);
        let k = trainer.iteration();
        if k.is_multiple_of(interval) || k == trainer.hp.iterations {
            let stats = std::mem::take(&mut acc).finish(k);
            on_interval(trainer, &stats)?;
            history.push(stats);
        }
    }
    Ok(history)
}

/// One metrics CSV row.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricRow {
    pub stats: IntervalStats,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
    pub eval_success: Option<f64>,
}

impl MetricRow {
    /// Bumped whenever the column set changes.
    pub const VERSION: u32 = 1;

    pub const COLUMNS: [&'static str; 9] = [
        "iteration",
        "steps",
        "mean_abs_advantage",
        "mean_abs_growth",
        "mean_entropy_reward",
        "mean_reward",
        "eval_mean_return",
        "eval_std_return",
        "eval_success_fraction",
    ];

    pub fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let s = &self.stats;
        vec![
            s.iteration.to_string(),
            s.steps.to_string(),
            format!("{:e}", s.mean_abs_advantage),
            format!("{:e}", s.mean_abs_growth),
            format!("{:e}", s.mean_entropy_reward),
            format!("{:e}", s.mean_reward),
            opt(self.eval_mean),
            opt(self.eval_std),
            opt(self.eval_success),
        ]
    }
}
