//! Python bindings: environments, the trainer, rollouts and value iteration.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use umbrella_core::env::{make_env, EnvOverrides, Environment as CoreEnv, State, ENV_NAMES};
use umbrella_core::rollout::{evaluate, export_policy_map, RolloutConfig};
use umbrella_core::run::{cmd_eval, cmd_train, cmd_vi, EvalOptions};
use umbrella_core::umbrella::{self, Hyperparams, NetworkShape, Trainer as CoreTrainer};
use umbrella_core::vi::{vi_solve, Grid2D, GridPolicy, Interpolation, ViConfig};
use umbrella_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Shape(_) | Error::Domain(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Integrity { .. } | Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn state(s: (f64, f64)) -> State {
    [s.0, s.1]
}

/// A benchmark environment: `"mvmc"` (mountain car) or `"standup"` (arm).
#[pyclass(module = "umbrella_rl")]
struct Environment {
    inner: Box<dyn CoreEnv>,
}

#[pymethods]
impl Environment {
    #[new]
    #[pyo3(signature = (name, gravity=None, force=None, torque=None, delta=None))]
    fn new(
        name: &str,
        gravity: Option<f64>,
        force: Option<f64>,
        torque: Option<f64>,
        delta: Option<f64>,
    ) -> PyResult<Self> {
        let o = EnvOverrides {
            gravity,
            force,
            torque,
            delta,
        };
        Ok(Self {
            inner: make_env(name, &o).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn repr_dim(&self) -> usize {
        self.inner.repr_dim()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        self.inner.bounds().to_vec()
    }

    fn rate(&self, s: (f64, f64), action: usize) -> PyResult<(f64, f64)> {
        let v = self.inner.rate(&state(s), action).map_err(py_err)?;
        Ok((v[0], v[1]))
    }

    fn divergence(&self, s: (f64, f64), action: usize) -> f64 {
        self.inner.divergence(&state(s), action)
    }

    fn reward(&self, s: (f64, f64), action: usize) -> f64 {
        self.inner.reward(&state(s), action)
    }

    fn initial_density(&self, s: (f64, f64)) -> f64 {
        self.inner.initial_density(&state(s))
    }

    fn representation(&self, s: (f64, f64)) -> Vec<f64> {
        let mut h = vec![0.0; self.inner.repr_dim()];
        self.inner.representation(&state(s), &mut h);
        h
    }

    fn clip(&self, s: (f64, f64)) -> (f64, f64) {
        let c = self.inner.clip(&state(s));
        (c[0], c[1])
    }

    /// `n` draws from the initial density.
    fn sample_initial(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s = self.inner.sample_initial(&mut rng);
                (s[0], s[1])
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Environment({:?})", self.inner.name())
    }
}

fn apply_hyperparams(hp: &mut Hyperparams, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<()> {
    let Some(kw) = kwargs else { return Ok(()) };
    for (k, v) in kw.iter() {
        let key: String = k.extract()?;
        match key.as_str() {
            "gamma" => hp.gamma = v.extract()?,
            "alpha_tilde" => hp.alpha_tilde = v.extract()?,
            "batch_size" => hp.batch_size = v.extract()?,
            "iterations" => hp.iterations = v.extract()?,
            "lr_policy" => hp.lr_policy = v.extract()?,
            "lr_value" => hp.lr_value = v.extract()?,
            "lr_density" => hp.lr_density = v.extract()?,
            "wd_policy" => hp.wd_policy = v.extract()?,
            "wd_value" => hp.wd_value = v.extract()?,
            "wd_density" => hp.wd_density = v.extract()?,
            "log_floor" => hp.log_floor = v.extract()?,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown hyperparameter `{other}`"
                )))
            }
        }
    }
    Ok(())
}

/// Policy, value and density networks with their optimizer and sampler.
#[pyclass(module = "umbrella_rl")]
struct Trainer {
    inner: CoreTrainer,
}

#[pymethods]
impl Trainer {
    /// Keyword arguments override hyperparameters (`gamma`, `alpha_tilde`,
    /// `batch_size`, `lr_policy`, ...).
    #[new]
    #[pyo3(signature = (env, seed=0, width=128, depth=3, **kwargs))]
    fn new(
        env: &str,
        seed: u64,
        width: usize,
        depth: usize,
        kwargs: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let mut hp = Hyperparams::for_env(env).map_err(py_err)?;
        hp.seed = seed;
        apply_hyperparams(&mut hp, kwargs)?;
        let inner = CoreTrainer::new(
            env,
            EnvOverrides::default(),
            hp,
            NetworkShape { width, depth },
        )
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Self> {
        let inner = CoreTrainer::from_checkpoint(text, Path::new("<python>")).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn checkpoint(&self) -> String {
        self.inner.to_checkpoint()
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration()
    }

    /// Runs `n` training steps; returns the last step's diagnostics.
    #[pyo3(signature = (n=1))]
    fn step<'py>(&mut self, py: Python<'py>, n: usize) -> PyResult<Bound<'py, PyDict>> {
        let mut last = Default::default();
        for _ in 0..n {
            last = self.inner.step().map_err(py_err)?;
        }
        let d = PyDict::new(py);
        let umbrella::StepDiagnostics { batch, .. } = last;
        d.set_item("iteration", self.inner.iteration())?;
        d.set_item("mean_abs_advantage", batch.mean_abs_advantage)?;
        d.set_item("mean_abs_growth", batch.mean_abs_growth)?;
        d.set_item("mean_entropy_reward", batch.mean_entropy_reward)?;
        d.set_item("mean_reward", batch.mean_reward)?;
        Ok(d)
    }

    fn policy(&self, s: (f64, f64)) -> PyResult<Vec<f64>> {
        self.inner
            .nets
            .policy_distribution(&state(s))
            .map_err(py_err)
    }

    fn value(&self, s: (f64, f64)) -> PyResult<f64> {
        self.inner
            .nets
            .value_at(self.inner.env(), &state(s))
            .map_err(py_err)
    }

    fn density(&self, s: (f64, f64)) -> PyResult<f64> {
        self.inner
            .nets
            .density_at(self.inner.env(), &state(s))
            .map_err(py_err)
    }

    fn advantage(&self, s: (f64, f64), action: usize) -> PyResult<f64> {
        let t = &self.inner;
        umbrella::advantage(&t.nets, t.env(), &state(s), action, &t.hp).map_err(py_err)
    }

    fn growth_rate(&self, s: (f64, f64), actions: Vec<usize>) -> PyResult<f64> {
        let t = &self.inner;
        umbrella::growth_rate(&t.nets, t.env(), &state(s), &actions, &t.hp).map_err(py_err)
    }

    /// Rollouts from initial-density samples; `total_time` defaults to the
    /// environment's horizon.
    #[pyo3(signature = (n_runs=10, dt=0.05, total_time=None, seed=0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        n_runs: usize,
        dt: f64,
        total_time: Option<f64>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let t = &self.inner;
        let mut rc = RolloutConfig::for_env(t.env_name());
        rc.n_runs = n_runs;
        rc.dt = dt;
        rc.gamma = t.hp.gamma;
        rc.seed = seed;
        if let Some(total) = total_time {
            rc.total_time = total;
        }
        let stats = evaluate(t.env(), &t.nets, &rc).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("mean", stats.mean)?;
        d.set_item("std", stats.std)?;
        d.set_item("success_fraction", stats.success_fraction())?;
        d.set_item("returns", stats.returns)?;
        Ok(d)
    }

    /// `(s1, s2, action, probability)` on a `res x res` grid.
    fn policy_map(&self, res: usize) -> PyResult<Vec<(f64, f64, usize, f64)>> {
        let t = &self.inner;
        let rows = export_policy_map(t.env(), &t.nets, res).map_err(py_err)?;
        Ok(rows
            .into_iter()
            .map(|r| (r.s1, r.s2, r.action, r.probability))
            .collect())
    }
}

/// Grid value iteration. Returns a dict with `values`, `policy` (row-major,
/// first axis slowest), `sweeps` and, if `eval_runs > 0`, rollout stats of
/// the greedy policy.
#[pyfunction]
#[pyo3(signature = (env, res=(301, 301), dt=0.05, gamma=0.95, tolerance=1e-7, max_sweeps=500_000, interpolation="bilinear", eval_runs=0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn value_iteration<'py>(
    py: Python<'py>,
    env: &str,
    res: (usize, usize),
    dt: f64,
    gamma: f64,
    tolerance: f64,
    max_sweeps: usize,
    interpolation: &str,
    eval_runs: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let e = make_env(env, &EnvOverrides::default()).map_err(py_err)?;
    let cfg = ViConfig {
        dt,
        gamma,
        tolerance,
        max_sweeps,
        interpolation: Interpolation::from_tag(interpolation).map_err(py_err)?,
    };
    let grid = Grid2D::covering(e.as_ref(), [res.0, res.1]).map_err(py_err)?;
    let sol = py
        .detach(|| vi_solve(e.as_ref(), grid, &cfg))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("sweeps", sol.sweeps)?;
    if eval_runs > 0 {
        let mut rc = RolloutConfig::for_env(env);
        rc.dt = dt;
        rc.gamma = gamma;
        rc.n_runs = eval_runs;
        rc.seed = seed;
        let policy = GridPolicy {
            grid: sol.grid.clone(),
            n_actions: e.n_actions(),
        };
        let stats = evaluate(e.as_ref(), &policy, &rc).map_err(py_err)?;
        d.set_item("mean_return", stats.mean)?;
        d.set_item("std_return", stats.std)?;
        d.set_item("success_fraction", stats.success_fraction())?;
    }
    d.set_item("values", sol.grid.values)?;
    d.set_item("policy", sol.grid.policy)?;
    Ok(d)
}

/// Runs the `train` command on a config file; returns the run directory.
#[pyfunction]
#[pyo3(signature = (config, resume=None))]
fn train(py: Python<'_>, config: PathBuf, resume: Option<PathBuf>) -> PyResult<String> {
    let out = py
        .detach(|| cmd_train(&config, resume.as_deref()))
        .map_err(py_err)?;
    Ok(out.run_dir.display().to_string())
}

/// Runs the `vi` command on a config file; returns the run directory.
#[pyfunction]
fn run_vi(py: Python<'_>, config: PathBuf) -> PyResult<String> {
    let out = py.detach(|| cmd_vi(&config)).map_err(py_err)?;
    Ok(out.run_dir.display().to_string())
}

/// Runs the `eval` command on a checkpoint; returns `(mean, std, run_dir)`.
#[pyfunction]
#[pyo3(signature = (checkpoint, runs=None, dt=None, total_time=None, seed=None))]
fn evaluate_checkpoint(
    py: Python<'_>,
    checkpoint: PathBuf,
    runs: Option<usize>,
    dt: Option<f64>,
    total_time: Option<f64>,
    seed: Option<u64>,
) -> PyResult<(f64, f64, String)> {
    let opts = EvalOptions {
        runs,
        dt,
        total_time,
        seed,
        ..Default::default()
    };
    let out = py.detach(|| cmd_eval(&checkpoint, &opts)).map_err(py_err)?;
    Ok((
        out.stats.mean,
        out.stats.std,
        out.run_dir.display().to_string(),
    ))
}

#[pyfunction]
fn environments() -> Vec<&'static str> {
    ENV_NAMES.to_vec()
}

#[pymodule]
fn umbrella_rl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Environment>()?;
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(environments, m)?)?;
    m.add_function(wrap_pyfunction!(value_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_vi, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_checkpoint, m)?)?;
    Ok(())
}
