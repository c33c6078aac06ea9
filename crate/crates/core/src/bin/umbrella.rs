use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use umbrella_core::run::{cmd_eval, cmd_export_policy_map, cmd_train, cmd_vi, EvalOptions};

/// Umbrella reinforcement learning: training, evaluation and the grid
/// value-iteration baseline.
///
/// Artifacts go to `<out>/<run-id>/`; `<out>` is the config's `output_dir`
/// unless UMBRELLA_OUT is set.
#[derive(Parser)]
#[command(name = "umbrella", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the policy, value and density networks.
    Train {
        config: PathBuf,
        /// Continue from a trainer checkpoint of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Roll out a checkpoint's policy and export its action map.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        /// Total simulated time per run.
        #[arg(long = "T", visible_alias = "total-time")]
        total_time: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Policy-map grid resolution per axis.
        #[arg(long, default_value_t = 101)]
        res: usize,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Solve the discretized problem by grid value iteration.
    Vi { config: PathBuf },
    /// Write the greedy action and its probability on a regular grid.
    ExportPolicyMap {
        checkpoint: PathBuf,
        #[arg(long)]
        res: usize,
        #[arg(long)]
        run_id: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, resume } => cmd_train(&config, resume.as_deref()).map(|out| {
            if let Some(row) = out.rows.last() {
                match (row.eval_mean, row.eval_std) {
                    (Some(m), Some(s)) => println!(
                        "iteration {}: mean return {m:.6} ± {s:.6}",
                        row.stats.iteration
                    ),
                    _ => println!("iteration {}", row.stats.iteration),
                }
            }
            println!("{}", out.run_dir.display());
        }),
        Command::Eval {
            checkpoint,
            runs,
            dt,
            total_time,
            seed,
            res,
            run_id,
        } => {
            let opts = EvalOptions {
                runs,
                dt,
                total_time,
                seed,
                map_resolution: Some(res),
                run_id,
                output_dir: None,
            };
            cmd_eval(&checkpoint, &opts).map(|out| {
                let s = &out.stats;
                println!(
                    "mean return {:.6} ± {:.6} over {} runs, success fraction {:.2}",
                    s.mean,
                    s.std,
                    s.returns.len(),
                    s.success_fraction()
                );
                println!("{}", out.run_dir.display());
            })
        }
        Command::Vi { config } => cmd_vi(&config).map(|out| {
            println!("converged after {} sweeps", out.sweeps);
            if let Some(s) = &out.stats {
                println!("greedy policy: mean return {:.6} ± {:.6}", s.mean, s.std);
            }
            println!("{}", out.run_dir.display());
        }),
        Command::ExportPolicyMap {
            checkpoint,
            res,
            run_id,
        } => cmd_export_policy_map(&checkpoint, res, run_id.as_deref(), None)
            .map(|path| println!("{}", path.display())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
