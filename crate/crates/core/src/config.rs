//! Experiment configuration: TOML with dotted keys such as
//! `umbrella.gamma = 0.95`. Nested tables are flattened to the same dotted
//! names, every key is optional except `environment`, and unknown keys are
//! rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::env::EnvOverrides;
use crate::error::{Error, Result};
use crate::rollout::RolloutConfig;
use crate::umbrella::{Hyperparams, NetworkShape};
use crate::vi::{Interpolation, ViConfig};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ENV_VAR: &str = "UMBRELLA_OUT";

/// Output root: the environment variable if set, else `configured`, else
/// `runs`.
pub fn output_root(configured: Option<&Path>) -> PathBuf {
    match std::env::var_os(OUTPUT_ENV_VAR) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => configured
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("runs")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainSettings {
    /// Iterations between metric rows.
    pub metrics_interval: u64,
    /// Iterations between checkpoints (rounded to metric rows).
    pub checkpoint_interval: u64,
    /// Run evaluation rollouts at every metric row.
    pub evaluate: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            metrics_interval: 2000,
            checkpoint_interval: 20_000,
            evaluate: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub environment: String,
    pub run_id: Option<String>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub env: EnvOverrides,
    pub hp: Hyperparams,
    pub network: NetworkShape,
    pub train: TrainSettings,
    pub rollout: RolloutConfig,
    pub vi: ViConfig,
    pub vi_res: [usize; 2],
    /// Roll out the greedy grid policy after solving.
    pub vi_evaluate: bool,
    /// Keys set explicitly in the source text, with their values as given.
    pub overrides: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
enum Value {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
}

impl Value {
    fn display(&self) -> String {
        match self {
            Value::Str(s) => format!("{s:?}"),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => format!("{f:?}"),
            Value::Bool(b) => b.to_string(),
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let value = match v {
            toml::Value::Table(t) => {
                flatten(&key, t, out)?;
                continue;
            }
            toml::Value::String(s) => Value::Str(s.clone()),
            toml::Value::Integer(i) => Value::Int(*i),
            toml::Value::Float(f) => Value::Float(*f),
            toml::Value::Boolean(b) => Value::Bool(*b),
            other => {
                return Err(Error::Config(format!(
                    "`{key}`: unsupported value type {}",
                    other.type_str()
                )))
            }
        };
        out.insert(key, value);
    }
    Ok(())
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Int(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("`{key}` must be a number"))),
    }
}

fn uint(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Int(i) if *i >= 0 => Ok(*i as u64),
        // allows `iterations = 1.2e6`
        Value::Float(f) if *f >= 0.0 && f.fract() == 0.0 && *f < 2f64.powi(63) => Ok(*f as u64),
        _ => Err(Error::Config(format!(
            "`{key}` must be a non-negative integer"
        ))),
    }
}

fn string(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::Str(s) => Ok(s.clone()),
        _ => Err(Error::Config(format!("`{key}` must be a string"))),
    }
}

fn boolean(key: &str, v: &Value) -> Result<bool> {
    match v {
        Value::Bool(b) => Ok(*b),
        _ => Err(Error::Config(format!("`{key}` must be true or false"))),
    }
}

impl ExperimentConfig {
    /// Defaults for an environment with every other key unset.
    pub fn defaults(environment: &str) -> Result<Self> {
        let hp = Hyperparams::for_env(environment)?;
        let mut rollout = RolloutConfig::for_env(environment);
        rollout.gamma = hp.gamma;
        Ok(Self {
            environment: environment.to_string(),
            run_id: None,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            env: EnvOverrides::default(),
            network: NetworkShape::default(),
            train: TrainSettings::default(),
            rollout,
            vi: ViConfig {
                gamma: hp.gamma,
                ..ViConfig::default()
            },
            hp,
            vi_res: [301, 301],
            vi_evaluate: true,
            overrides: BTreeMap::new(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat)?;

        let environment = match flat.get("environment") {
            Some(v) => string("environment", v)?,
            None => return Err(Error::Config("missing required key `environment`".into())),
        };
        let mut cfg = Self::defaults(&environment)?;
        // rollout.seed, rollout.gamma, vi.gamma
        let mut explicit = [false; 3];
        for (key, v) in &flat {
            let k = key.as_str();
            match k {
                "environment" => {}
                "run_id" => cfg.run_id = Some(string(k, v)?),
                "seed" => {
                    cfg.seed = uint(k, v)?;
                    cfg.hp.seed = cfg.seed;
                }
                "output_dir" => cfg.output_dir = PathBuf::from(string(k, v)?),

                "env.gravity" => cfg.env.gravity = Some(float(k, v)?),
                "env.force" => cfg.env.force = Some(float(k, v)?),
                "env.torque" => cfg.env.torque = Some(float(k, v)?),
                "env.delta" => cfg.env.delta = Some(float(k, v)?),

                "umbrella.gamma" => cfg.hp.gamma = float(k, v)?,
                "umbrella.alpha_tilde" => cfg.hp.alpha_tilde = float(k, v)?,
                "umbrella.batch_size" => cfg.hp.batch_size = uint(k, v)? as usize,
                "umbrella.iterations" => cfg.hp.iterations = uint(k, v)?,
                "umbrella.lr_policy" => cfg.hp.lr_policy = float(k, v)?,
                "umbrella.lr_value" => cfg.hp.lr_value = float(k, v)?,
                "umbrella.lr_density" => cfg.hp.lr_density = float(k, v)?,
                "umbrella.wd_policy" => cfg.hp.wd_policy = float(k, v)?,
                "umbrella.wd_value" => cfg.hp.wd_value = float(k, v)?,
                "umbrella.wd_density" => cfg.hp.wd_density = float(k, v)?,
                "umbrella.log_floor" => cfg.hp.log_floor = float(k, v)?,
                "umbrella.adam_beta1" => cfg.hp.adam_beta1 = float(k, v)?,
                "umbrella.adam_beta2" => cfg.hp.adam_beta2 = float(k, v)?,
                "umbrella.adam_epsilon" => cfg.hp.adam_epsilon = float(k, v)?,

                "network.width" => cfg.network.width = uint(k, v)? as usize,
                "network.depth" => cfg.network.depth = uint(k, v)? as usize,

                "train.metrics_interval" => cfg.train.metrics_interval = uint(k, v)?,
                "train.checkpoint_interval" => cfg.train.checkpoint_interval = uint(k, v)?,
                "train.evaluate" => cfg.train.evaluate = boolean(k, v)?,

                "rollout.dt" => cfg.rollout.dt = float(k, v)?,
                "rollout.total_time" => cfg.rollout.total_time = float(k, v)?,
                "rollout.n_runs" => cfg.rollout.n_runs = uint(k, v)? as usize,
                "rollout.episodes_per_run" => cfg.rollout.episodes_per_run = uint(k, v)? as usize,
                "rollout.gamma" => {
                    cfg.rollout.gamma = float(k, v)?;
                    explicit[1] = true;
                }
                "rollout.seed" => {
                    cfg.rollout.seed = uint(k, v)?;
                    explicit[0] = true;
                }

                "vi.dt" => cfg.vi.dt = float(k, v)?,
                "vi.gamma" => {
                    cfg.vi.gamma = float(k, v)?;
                    explicit[2] = true;
                }
                "vi.tolerance" => cfg.vi.tolerance = float(k, v)?,
                "vi.max_sweeps" => cfg.vi.max_sweeps = uint(k, v)? as usize,
                "vi.res1" => cfg.vi_res[0] = uint(k, v)? as usize,
                "vi.res2" => cfg.vi_res[1] = uint(k, v)? as usize,
                "vi.evaluate" => cfg.vi_evaluate = boolean(k, v)?,
                "vi.interpolation" => {
                    cfg.vi.interpolation = Interpolation::from_tag(&string(k, v)?)?
                }

                other => {
                    return Err(Error::Config(format!(
                        "unknown configuration key `{other}`"
                    )));
                }
            }
            cfg.overrides.insert(key.clone(), v.display());
        }
        // derived defaults follow the keys they mirror unless set explicitly
        if !explicit[0] {
            cfg.rollout.seed = cfg.seed;
        }
        if !explicit[1] {
            cfg.rollout.gamma = cfg.hp.gamma;
        }
        if !explicit[2] {
            cfg.vi.gamma = cfg.hp.gamma;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.rollout.validate()?;
        self.vi.validate()?;
        if self.network.width == 0 || self.network.depth < 2 {
            return Err(Error::Config(
                "network.width must be >= 1 and network.depth >= 2".into(),
            ));
        }
        if self.train.metrics_interval == 0 || self.train.checkpoint_interval == 0 {
            return Err(Error::Config("train intervals must be positive".into()));
        }
        if self.vi_res.iter().any(|&n| n < 2) {
            return Err(Error::Config("vi.res1 and vi.res2 must be >= 2".into()));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
                return Err(Error::Config(format!(
                    "run_id `{id}` is not a plain directory name"
                )));
            }
        }
        crate::env::make_env(&self.environment, &self.env)?;
        Ok(())
    }

    /// `output_dir`, unless the output environment variable is set.
    pub fn output_root(&self) -> PathBuf {
        output_root(Some(&self.output_dir))
    }

    /// Run directory name for training.
    pub fn train_run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}-seed{}", self.environment, self.seed))
    }

    /// Run directory name for value iteration; includes the time step so a
    /// `dt` sweep lands in separate directories.
    pub fn vi_run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            format!(
                "{}-vi-{}-dt{}-res{}x{}",
                self.environment,
                self.vi.interpolation.tag(),
                self.vi.dt,
                self.vi_res[0],
                self.vi_res[1]
            )
        })
    }

    /// Fully resolved configuration in the same format it was read from.
    /// `output_dir` is omitted so a snapshot replays under any output root.
    pub fn to_toml(&self) -> String {
        let f = |v: f64| format!("{v:?}");
        let mut lines = vec![
            format!("environment = {:?}", self.environment),
            format!("seed = {}", self.seed),
        ];
        if let Some(id) = &self.run_id {
            lines.push(format!("run_id = {id:?}"));
        }
        let o = &self.env;
        for (k, v) in [
            ("gravity", o.gravity),
            ("force", o.force),
            ("torque", o.torque),
            ("delta", o.delta),
        ] {
            if let Some(v) = v {
                lines.push(format!("env.{k} = {}", f(v)));
            }
        }
        let hp = &self.hp;
        lines.extend([
            format!("umbrella.gamma = {}", f(hp.gamma)),
            format!("umbrella.alpha_tilde = {}", f(hp.alpha_tilde)),
            format!("umbrella.batch_size = {}", hp.batch_size),
            format!("umbrella.iterations = {}", hp.iterations),
            format!("umbrella.lr_policy = {}", f(hp.lr_policy)),
            format!("umbrella.lr_value = {}", f(hp.lr_value)),
            format!("umbrella.lr_density = {}", f(hp.lr_density)),
            format!("umbrella.wd_policy = {}", f(hp.wd_policy)),
            format!("umbrella.wd_value = {}", f(hp.wd_value)),
            format!("umbrella.wd_density = {}", f(hp.wd_density)),
            format!("umbrella.log_floor = {}", f(hp.log_floor)),
            format!("umbrella.adam_beta1 = {}", f(hp.adam_beta1)),
            format!("umbrella.adam_beta2 = {}", f(hp.adam_beta2)),
            format!("umbrella.adam_epsilon = {}", f(hp.adam_epsilon)),
            format!("network.width = {}", self.network.width),
            format!("network.depth = {}", self.network.depth),
            format!("train.metrics_interval = {}", self.train.metrics_interval),
            format!(
                "train.checkpoint_interval = {}",
                self.train.checkpoint_interval
            ),
            format!("train.evaluate = {}", self.train.evaluate),
            format!("rollout.dt = {}", f(self.rollout.dt)),
            format!("rollout.total_time = {}", f(self.rollout.total_time)),
            format!("rollout.n_runs = {}", self.rollout.n_runs),
            format!(
                "rollout.episodes_per_run = {}",
                self.rollout.episodes_per_run
            ),
            format!("rollout.gamma = {}", f(self.rollout.gamma)),
            format!("rollout.seed = {}", self.rollout.seed),
            format!("vi.dt = {}", f(self.vi.dt)),
            format!("vi.gamma = {}", f(self.vi.gamma)),
            format!("vi.tolerance = {}", f(self.vi.tolerance)),
            format!("vi.max_sweeps = {}", self.vi.max_sweeps),
            format!("vi.res1 = {}", self.vi_res[0]),
            format!("vi.res2 = {}", self.vi_res[1]),
            format!("vi.evaluate = {}", self.vi_evaluate),
            format!("vi.interpolation = {:?}", self.vi.interpolation.tag()),
        ]);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
