//! Trains in-process and prints a learning curve with periodic rollouts.
//!
//! Settings come from environment variables so quick sweeps need no config files:
//! `ENV` (mvmc | standup), `ITERS`, `EVERY`, `BATCH`, `WIDTH`, `SEED`, `ALPHA`,
//! learning rates `LRP`/`LRV`/`LRD` and weight decays `WDP`/`WDV`/`WDD`.
//!
//! ```text
//! ENV=standup ITERS=20000 EVERY=5000 LRD=1e-5 cargo run --release --example learning_curve
//! ```
//!
//! Columns: iteration, wall time, mean |A|, mean |G|, mean entropy reward, mean reward,
//! rollout J ± std, success fraction, then p̄ at two probe states and V at one.

use std::time::Instant;
use umbrella_core::env::EnvOverrides;
use umbrella_core::rollout::{evaluate, RolloutConfig};
use umbrella_core::umbrella::{train_loop, Hyperparams, NetworkShape, Trainer};

fn arg(name: &str, default: f64) -> f64 {
    std::env::var(name)
        .ok()
        .map(|v| v.parse().unwrap())
        .unwrap_or(default)
}

fn main() {
    let env = std::env::var("ENV").unwrap_or("mvmc".into());
    let mut hp = Hyperparams::for_env(&env).unwrap();
    hp.batch_size = arg("BATCH", 1024.0) as usize;
    hp.iterations = arg("ITERS", 20000.0) as u64;
    hp.lr_policy = arg("LRP", hp.lr_policy);
    hp.lr_value = arg("LRV", hp.lr_value);
    hp.lr_density = arg("LRD", hp.lr_density);
    hp.wd_policy = arg("WDP", hp.wd_policy);
    hp.wd_value = arg("WDV", hp.wd_value);
    hp.wd_density = arg("WDD", hp.wd_density);
    hp.alpha_tilde = arg("ALPHA", hp.alpha_tilde);
    hp.seed = arg("SEED", 0.0) as u64;
    let width = arg("WIDTH", 64.0) as usize;
    let every = arg("EVERY", 2000.0) as u64;
    let mut t = Trainer::new(
        &env,
        EnvOverrides::default(),
        hp,
        NetworkShape { width, depth: 3 },
    )
    .unwrap();
    let mut rc = RolloutConfig::for_env(&env);
    rc.n_runs = 10;
    let start = Instant::now();
    train_loop(&mut t, every, |tr, s| {
        let st = evaluate(tr.env(), &tr.nets, &rc).unwrap();
        let env = tr.env();
        let pm = |x: f64, v: f64| tr.nets.density_at(env, &[x, v]).unwrap();
        println!(
            "{:>7} {:>7.1}s |A| {:.3e} |G| {:.3e} ent {:.3e} r {:.3} | J {:.4} ± {:.4} succ {:.1} | p(0.7,0) {:.3} p(0,0) {:.3} V(0.7,0) {:.3}",
            s.iteration, start.elapsed().as_secs_f64(), s.mean_abs_advantage, s.mean_abs_growth,
            s.mean_entropy_reward, s.mean_reward, st.mean, st.std, st.success_fraction(),
            pm(0.7, 0.0), pm(0.0, 0.0), tr.nets.value_at(env, &[0.7, 0.0]).unwrap()
        );
        Ok(())
    })
    .unwrap();
}
