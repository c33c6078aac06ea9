//! Command implementations: run directories, manifests, CSV output and
//! checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::config::{output_root, ExperimentConfig};
use crate::env::make_env;
use crate::error::{Error, Result};
use crate::rollout::{
    evaluate, export_policy_map, Policy, PolicyMapRow, RolloutConfig, RolloutStats,
};
use crate::umbrella::{train_loop, MetricRow, Trainer};
use crate::vi::{vi_solve, Grid2D, GridPolicy};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First line of every metrics CSV.
pub fn metrics_version_line() -> String {
    format!("# umbrella-metrics v{}", MetricRow::VERSION)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Renders a CSV table, optionally preceded by a comment line.
pub fn csv_text<I, R>(comment: Option<&str>, header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::Usage(format!("csv buffer: {e}")))?;
    let mut text = String::new();
    if let Some(c) = comment {
        text.push_str(c);
        text.push('\n');
    }
    text.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(text)
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// Start/end record of one command invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub run_id: String,
    pub version: String,
    pub started: u64,
    pub finished: Option<u64>,
    pub status: String,
    /// Keys set explicitly in the configuration.
    pub overrides: BTreeMap<String, String>,
    pub final_metrics: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn start(command: &str, run_id: &str, overrides: BTreeMap<String, String>) -> Self {
        Self {
            command: command.to_string(),
            run_id: run_id.to_string(),
            version: VERSION.to_string(),
            started: unix_now(),
            finished: None,
            status: "running".into(),
            overrides,
            final_metrics: BTreeMap::new(),
        }
    }

    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("command = {:?}\n", self.command));
        s.push_str(&format!("run_id = {:?}\n", self.run_id));
        s.push_str(&format!("version = {:?}\n", self.version));
        s.push_str("config = \"config.toml\"\n");
        s.push_str(&format!("started_unix = {}\n", self.started));
        if let Some(f) = self.finished {
            s.push_str(&format!("finished_unix = {f}\n"));
        }
        s.push_str(&format!("status = {:?}\n", self.status));
        s.push_str("\n[overrides]\n");
        for (k, v) in &self.overrides {
            s.push_str(&format!("{k:?} = {v:?}\n"));
        }
        s.push_str("\n[final_metrics]\n");
        for (k, v) in &self.final_metrics {
            s.push_str(&format!("{k} = {v:?}\n"));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        atomic_write(&dir.join("manifest.toml"), self.to_toml().as_bytes())
    }

    /// Marks the manifest finished with the outcome of `result`.
    fn finish<T>(&mut self, dir: &Path, result: &Result<T>) -> Result<()> {
        self.finished = Some(unix_now());
        self.status = match result {
            Ok(_) => "completed".into(),
            Err(e) => format!("failed: {e}"),
        };
        self.write(dir)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub rows: Vec<MetricRow>,
}

fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join("checkpoints")
        .join(format!("step-{iteration:09}.ckpt"))
}

/// Rows of an existing metrics CSV whose iteration is at most `up_to`.
fn read_metric_rows(path: &Path, up_to: u64) -> Result<Vec<Vec<String>>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let it: u64 = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Integrity {
                path: path.to_path_buf(),
                reason: "metrics row without an iteration".into(),
            })?;
        if it <= up_to {
            rows.push(rec.iter().map(str::to_string).collect());
        }
    }
    Ok(rows)
}

fn check_resume(trainer: &Trainer, cfg: &ExperimentConfig) -> Result<()> {
    let mut hp = cfg.hp.clone();
    hp.iterations = trainer.hp.iterations;
    let mismatch = if trainer.env_name() != cfg.environment {
        Some("environment")
    } else if trainer.overrides() != &cfg.env {
        Some("env.*")
    } else if trainer.shape != cfg.network {
        Some("network.*")
    } else if trainer.hp != hp {
        Some("umbrella.*")
    } else {
        None
    };
    match mismatch {
        Some(keys) => Err(Error::Config(format!(
            "checkpoint does not match the configuration ({keys} differ)"
        ))),
        None => Ok(()),
    }
}

/// Trains per `config`, writing manifest, config snapshot, metrics and
/// checkpoints under `<out>/<run-id>/`.
pub fn cmd_train(config: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let cfg = ExperimentConfig::from_path(config)?;
    let run_id = cfg.train_run_id();
    let dir = cfg.output_root().join(&run_id);
    create_dir(&dir.join("checkpoints"))?;
    atomic_write(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut manifest = RunManifest::start("train", &run_id, cfg.overrides.clone());
    manifest.write(&dir)?;

    let result = train_in(&cfg, &dir, resume, &mut manifest);
    manifest.finish(&dir, &result)?;
    result
}

fn train_in(
    cfg: &ExperimentConfig,
    dir: &Path,
    resume: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<TrainOutcome> {
    let metrics_path = dir.join("metrics.csv");
    let timing_path = dir.join("timing.csv");
    let (mut trainer, mut lines) = match resume {
        Some(ck) => {
            let text = fs::read_to_string(ck).map_err(|e| Error::io(ck, e))?;
            let mut t = Trainer::from_checkpoint(&text, ck)?;
            check_resume(&t, cfg)?;
            t.hp.iterations = cfg.hp.iterations;
            let kept = read_metric_rows(&metrics_path, t.iteration())?;
            (t, kept)
        }
        None => {
            let t = Trainer::new(
                &cfg.environment,
                cfg.env.clone(),
                cfg.hp.clone(),
                cfg.network,
            )?;
            atomic_write(&checkpoint_path(dir, 0), t.to_checkpoint().as_bytes())?;
            (t, Vec::new())
        }
    };
    let mut timing = read_metric_rows(&timing_path, trainer.iteration())?;
    let clock = Instant::now();
    let offset = timing
        .last()
        .and_then(|r| r.get(1))
        .and_then(|v| v.parse::<f64>().ok())
        .unwrap_or(0.0);
    let mut rows = Vec::new();
    let rollout = cfg.rollout;

    let write_metrics = |lines: &[Vec<String>]| -> Result<()> {
        let text = csv_text(
            Some(&metrics_version_line()),
            &MetricRow::COLUMNS,
            lines.iter().cloned(),
        )?;
        atomic_write(&metrics_path, text.as_bytes())
    };
    write_metrics(&lines)?;

    let checkpoint_every = cfg.train.checkpoint_interval;
    train_loop(&mut trainer, cfg.train.metrics_interval, |t, stats| {
        let mut row = MetricRow {
            stats: *stats,
            ..Default::default()
        };
        if cfg.train.evaluate || stats.iteration == t.hp.iterations {
            let ev = evaluate(t.env(), &t.nets, &rollout)?;
            row.eval_mean = Some(ev.mean);
            row.eval_std = Some(ev.std);
            row.eval_success = Some(ev.success_fraction());
        }
        lines.push(row.fields());
        write_metrics(&lines)?;
        timing.push(vec![
            stats.iteration.to_string(),
            format!("{:.3}", offset + clock.elapsed().as_secs_f64()),
        ]);
        let text = csv_text(
            None,
            &["iteration", "elapsed_seconds"],
            timing.iter().cloned(),
        )?;
        atomic_write(&timing_path, text.as_bytes())?;
        if stats.iteration % checkpoint_every == 0 || stats.iteration == t.hp.iterations {
            atomic_write(
                &checkpoint_path(dir, stats.iteration),
                t.to_checkpoint().as_bytes(),
            )?;
        }
        rows.push(row);
        Ok(())
    })?;

    if let Some(last) = rows.last() {
        let m = &mut manifest.final_metrics;
        m.insert("iteration".into(), last.stats.iteration.to_string());
        m.insert(
            "mean_abs_advantage".into(),
            fmt(last.stats.mean_abs_advantage),
        );
        m.insert("mean_abs_growth".into(), fmt(last.stats.mean_abs_growth));
        if let (Some(mean), Some(std), Some(succ)) =
            (last.eval_mean, last.eval_std, last.eval_success)
        {
            m.insert("eval_mean_return".into(), fmt(mean));
            m.insert("eval_std_return".into(), fmt(std));
            m.insert("eval_success_fraction".into(), fmt(succ));
        }
    }
    manifest.final_metrics.insert(
        "checkpoint".into(),
        checkpoint_path(dir, trainer.iteration())
            .display()
            .to_string(),
    );
    Ok(TrainOutcome {
        run_dir: dir.to_path_buf(),
        rows,
    })
}

/// Options of the `eval` command; `None` keeps the checkpoint's defaults.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub runs: Option<usize>,
    pub dt: Option<f64>,
    pub total_time: Option<f64>,
    pub seed: Option<u64>,
    pub map_resolution: Option<usize>,
    pub run_id: Option<String>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub run_dir: PathBuf,
    pub stats: RolloutStats,
}

fn load_trainer(path: &Path) -> Result<Trainer> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Trainer::from_checkpoint(&text, path)
}

fn checkpoint_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into())
}

fn returns_csv(stats: &RolloutStats) -> Result<String> {
    csv_text(
        Some(&metrics_version_line()),
        &["run", "return", "success"],
        stats
            .returns
            .iter()
            .zip(&stats.successes)
            .enumerate()
            .map(|(i, (r, s))| vec![i.to_string(), fmt(*r), (*s as u8).to_string()]),
    )
}

fn summary_csv(stats: &RolloutStats, cfg: &RolloutConfig) -> Result<String> {
    csv_text(
        Some(&metrics_version_line()),
        &[
            "n_runs",
            "episodes_per_run",
            "dt",
            "total_time",
            "gamma",
            "seed",
            "mean_return",
            "std_return",
            "success_fraction",
        ],
        [vec![
            cfg.n_runs.to_string(),
            cfg.episodes_per_run.to_string(),
            fmt(cfg.dt),
            fmt(cfg.total_time),
            fmt(cfg.gamma),
            cfg.seed.to_string(),
            fmt(stats.mean),
            fmt(stats.std),
            fmt(stats.success_fraction()),
        ]],
    )
}

fn policy_map_csv(rows: &[PolicyMapRow]) -> Result<String> {
    csv_text(
        None,
        &["s1", "s2", "action", "probability"],
        rows.iter().map(|r| {
            vec![
                fmt(r.s1),
                fmt(r.s2),
                r.action.to_string(),
                fmt(r.probability),
            ]
        }),
    )
}

/// Rolls out the checkpoint's policy, writes per-run returns, a summary
/// and the policy map, and returns the statistics.
pub fn cmd_eval(checkpoint: &Path, opts: &EvalOptions) -> Result<EvalOutcome> {
    let trainer = load_trainer(checkpoint)?;
    let mut rc = RolloutConfig::for_env(trainer.env_name());
    rc.gamma = trainer.hp.gamma;
    rc.seed = trainer.hp.seed;
    if let Some(n) = opts.runs {
        rc.n_runs = n;
    }
    if let Some(dt) = opts.dt {
        rc.dt = dt;
    }
    if let Some(t) = opts.total_time {
        rc.total_time = t;
    }
    if let Some(s) = opts.seed {
        rc.seed = s;
    }
    rc.validate()?;
    let run_id = opts
        .run_id
        .clone()
        .unwrap_or_else(|| format!("eval-{}", checkpoint_stem(checkpoint)));
    let dir = output_root(opts.output_dir.as_deref()).join(&run_id);
    create_dir(&dir)?;

    let mut overrides = BTreeMap::new();
    overrides.insert("checkpoint".to_string(), checkpoint.display().to_string());
    for (k, v) in [
        ("rollout.n_runs", opts.runs.map(|v| v.to_string())),
        ("rollout.dt", opts.dt.map(fmt)),
        ("rollout.total_time", opts.total_time.map(fmt)),
        ("rollout.seed", opts.seed.map(|v| v.to_string())),
    ] {
        if let Some(v) = v {
            overrides.insert(k.to_string(), v);
        }
    }
    let mut manifest = RunManifest::start("eval", &run_id, overrides);
    let mut snapshot = ExperimentConfig::defaults(trainer.env_name())?;
    snapshot.env = trainer.overrides().clone();
    snapshot.hp = trainer.hp.clone();
    snapshot.seed = trainer.hp.seed;
    snapshot.network = trainer.shape;
    snapshot.rollout = rc;
    atomic_write(&dir.join("config.toml"), snapshot.to_toml().as_bytes())?;
    manifest.write(&dir)?;

    let result = (|| -> Result<RolloutStats> {
        let stats = evaluate(trainer.env(), &trainer.nets, &rc)?;
        atomic_write(&dir.join("returns.csv"), returns_csv(&stats)?.as_bytes())?;
        atomic_write(
            &dir.join("summary.csv"),
            summary_csv(&stats, &rc)?.as_bytes(),
        )?;
        let res = opts.map_resolution.unwrap_or(101);
        let map = export_policy_map(trainer.env(), &trainer.nets, res)?;
        atomic_write(
            &dir.join("policy_map.csv"),
            policy_map_csv(&map)?.as_bytes(),
        )?;
        Ok(stats)
    })();
    if let Ok(stats) = &result {
        manifest
            .final_metrics
            .insert("mean_return".into(), fmt(stats.mean));
        manifest
            .final_metrics
            .insert("std_return".into(), fmt(stats.std));
        manifest
            .final_metrics
            .insert("success_fraction".into(), fmt(stats.success_fraction()));
    }
    manifest.finish(&dir, &result)?;
    Ok(EvalOutcome {
        run_dir: dir,
        stats: result?,
    })
}

/// Writes the greedy-action map of a checkpoint's policy.
pub fn cmd_export_policy_map(
    checkpoint: &Path,
    res: usize,
    run_id: Option<&str>,
    output_dir: Option<&Path>,
) -> Result<PathBuf> {
    let trainer = load_trainer(checkpoint)?;
    let run_id = run_id
        .map(str::to_string)
        .unwrap_or_else(|| format!("map-{}", checkpoint_stem(checkpoint)));
    let dir = output_root(output_dir).join(run_id);
    create_dir(&dir)?;
    let map = export_policy_map(trainer.env(), &trainer.nets, res)?;
    let path = dir.join("policy_map.csv");
    atomic_write(&path, policy_map_csv(&map)?.as_bytes())?;
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct ViOutcome {
    pub run_dir: PathBuf,
    pub sweeps: usize,
    pub stats: Option<RolloutStats>,
}

/// Solves the grid problem for `config`, writes the value/policy grid and
/// the residual history, and optionally rolls out the greedy policy.
pub fn cmd_vi(config: &Path) -> Result<ViOutcome> {
    let cfg = ExperimentConfig::from_path(config)?;
    let run_id = cfg.vi_run_id();
    let dir = cfg.output_root().join(&run_id);
    create_dir(&dir)?;
    atomic_write(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut manifest = RunManifest::start("vi", &run_id, cfg.overrides.clone());
    manifest.write(&dir)?;

    let result = (|| -> Result<ViOutcome> {
        let env = make_env(&cfg.environment, &cfg.env)?;
        let grid = Grid2D::covering(env.as_ref(), cfg.vi_res)?;
        let solution = vi_solve(env.as_ref(), grid, &cfg.vi)?;
        let mut buf = Vec::new();
        solution.grid.write_csv(&mut buf)?;
        atomic_write(&dir.join("grid.csv"), &buf)?;
        let text = csv_text(
            Some(&metrics_version_line()),
            &["sweep", "residual"],
            solution
                .residuals
                .iter()
                .enumerate()
                .map(|(i, r)| vec![(i + 1).to_string(), fmt(*r)]),
        )?;
        atomic_write(&dir.join("metrics.csv"), text.as_bytes())?;
        let stats = if cfg.vi_evaluate {
            let mut rc = cfg.rollout;
            rc.dt = cfg.vi.dt;
            let policy = GridPolicy {
                grid: solution.grid.clone(),
                n_actions: env.n_actions(),
            };
            let stats = evaluate(env.as_ref(), &policy as &dyn Policy, &rc)?;
            atomic_write(&dir.join("returns.csv"), returns_csv(&stats)?.as_bytes())?;
            atomic_write(
                &dir.join("summary.csv"),
                summary_csv(&stats, &rc)?.as_bytes(),
            )?;
            Some(stats)
        } else {
            None
        };
        Ok(ViOutcome {
            run_dir: dir.clone(),
            sweeps: solution.sweeps,
            stats,
        })
    })();
    if let Ok(out) = &result {
        let m = &mut manifest.final_metrics;
        m.insert("sweeps".into(), out.sweeps.to_string());
        if let Some(s) = &out.stats {
            m.insert("mean_return".into(), fmt(s.mean));
            m.insert("std_return".into(), fmt(s.std));
            m.insert("success_fraction".into(), fmt(s.success_fraction()));
        }
    }
    manifest.finish(&dir, &result)?;
    result
}
