mod common;

use common::{
    constant_net, fd5, fd_divergence, rel_err, rng, smooth_nets, swirl, swirl_env, StubEnv,
};
use rand::Rng;
use umbrella_core::env::{Environment, MountainCar, State};
use umbrella_core::umbrella::{
    advantage, effective_reward, estimate_gradients, evaluate_batch, growth_rate, train_step,
    transport_term, AdamStates, Hyperparams, NetworkShape, UmbrellaNets,
};

const SMALL: NetworkShape = NetworkShape {
    width: 16,
    depth: 3,
};

fn expected_advantage(
    nets: &UmbrellaNets,
    env: &dyn Environment,
    s: &State,
    hp: &Hyperparams,
) -> f64 {
    let pi = nets.policy_distribution(s).unwrap();
    (0..env.n_actions())
        .map(|a| pi[a] * advantage(nets, env, s, a, hp).unwrap())
        .sum()
}

#[test]
fn constant_effective_reward_with_matching_value_has_zero_mean_advantage() {
    let hp = Hyperparams {
        alpha_tilde: 0.0,
        ..Hyperparams::default()
    };
    let c = 0.7;
    let env = swirl_env(3, c);
    let mut nets = UmbrellaNets::new(&env, SMALL, 4).unwrap();
    nets.value = constant_net(&SMALL.value_specs(&env), c / hp.decay_rate());
    let mut r = rng(8);
    for _ in 0..50 {
        let s = env.sample_state(&mut r);
        let e = expected_advantage(&nets, &env, &s, &hp);
        assert!(e.abs() < 1e-10, "{s:?}: {e:e}");
    }
}

#[test]
fn constant_effective_reward_including_the_entropy_term() {
    let hp = Hyperparams::default();
    let env = swirl_env(4, 1.0);
    let b = 0.3_f64;
    let mut nets = UmbrellaNets::zeros(&env, SMALL).unwrap();
    nets.density = constant_net(&SMALL.density_specs(&env), b);
    // uniform policy over 4 actions, density e^b everywhere
    let c = 1.0 - hp.alpha_tilde * (b - 4f64.ln());
    nets.value = constant_net(&SMALL.value_specs(&env), c / hp.decay_rate());
    let mut r = rng(9);
    for _ in 0..50 {
        let s = env.sample_state(&mut r);
        for a in 0..4 {
            assert!((effective_reward(&nets, &env, &s, a, &hp).unwrap() - c).abs() < 1e-12);
        }
        assert!(expected_advantage(&nets, &env, &s, &hp).abs() < 1e-10);
    }
}

#[test]
fn growth_rate_vanishes_at_the_initial_density_without_motion() {
    let hp = Hyperparams::default();
    let probe = StubEnv::still(2, 0.0);
    let nets = UmbrellaNets::new(&probe, SMALL, 12).unwrap();
    let density = nets.density.clone();
    let env = StubEnv {
        p0: Box::new(move |s| {
            let x = ndarray::Array2::from_shape_vec((1, 2), s.to_vec()).unwrap();
            density.forward(x.view()).unwrap().0[[0, 0]]
        }),
        ..StubEnv::still(2, 0.0)
    };
    let mut r = rng(10);
    for _ in 0..50 {
        let s = env.sample_state(&mut r);
        let g = growth_rate(&nets, &env, &s, &[0, 1], &hp).unwrap();
        assert!(g.abs() < 1e-10, "{s:?}: {g:e}");
    }
}

#[test]
fn transport_term_expands_the_flux_divergence() {
    let env = swirl_env(3, 0.0);
    let mut r = rng(13);
    for seed in 0..5 {
        let nets = smooth_nets(&env, 100 * seed);
        for _ in 0..20 {
            let s: State = [r.random_range(-0.9..0.9), r.random_range(-0.9..0.9)];
            let pi = nets.policy_distribution(&s).unwrap();
            let expansion: f64 = (0..3)
                .map(|a| pi[a] * transport_term(&nets, &env, &s, a).unwrap())
                .sum();
            let flux = |p: &State| -> State {
                let pr = nets.policy_distribution(p).unwrap();
                let d = nets.density_at(&env, p).unwrap();
                let mut f = [0.0; 2];
                for (a, &pa) in pr.iter().enumerate() {
                    let v = swirl(p, a);
                    f[0] += d * pa * v[0];
                    f[1] += d * pa * v[1];
                }
                f
            };
            let fd = fd_divergence(flux, &s, 1e-4);
            let e = rel_err(expansion, fd, 1e-8);
            assert!(e < 1e-3, "{s:?}: {expansion} vs {fd} ({e:e})");
        }
    }
}

#[test]
fn growth_rate_combines_relaxation_and_transport() {
    let hp = Hyperparams::default();
    let env = MountainCar::default();
    let nets = UmbrellaNets::new(&env, SMALL, 21).unwrap();
    let mut r = rng(14);
    for _ in 0..30 {
        let s = env.sample_state(&mut r);
        let p = nets.density_at(&env, &s).unwrap();
        for a in 0..2 {
            let expected = hp.gamma.ln() * (p - env.initial_density(&s))
                - transport_term(&nets, &env, &s, a).unwrap();
            let g = growth_rate(&nets, &env, &s, &[a], &hp).unwrap();
            assert!(rel_err(g, expected, 1e-12) < 1e-12);
        }
    }
}

#[test]
fn flag_zone_effective_reward() {
    let hp = Hyperparams::default();
    let env = MountainCar::default();
    let mut nets = UmbrellaNets::zeros(&env, SMALL).unwrap();
    nets.density = constant_net(&SMALL.density_specs(&env), 250f64.ln());
    let expected = 1.0 - 0.01 * 125f64.ln();
    for a in 0..2 {
        let ru = effective_reward(&nets, &env, &[0.0, 0.0], a, &hp).unwrap();
        assert!((ru - expected).abs() < 1e-12, "{ru}");
        assert!((ru - 0.95172).abs() < 1e-5);
    }
}

#[test]
fn advantage_matches_a_finite_difference_oracle() {
    let hp = Hyperparams::default();
    let env = MountainCar::default();
    let mut r = rng(15);
    for seed in 0..4 {
        let nets = UmbrellaNets::new(&env, SMALL, seed).unwrap();
        for _ in 0..25 {
            let mut s = env.sample_state(&mut r);
            // keep clear of the wall-distance switch at x = 0
            if s[0].abs() < 0.05 {
                s[0] += 0.1;
            }
            for a in 0..2 {
                let v = env.rate(&s, a).unwrap();
                let dv = [
                    fd5(|x| nets.value_at(&env, &[x, s[1]]).unwrap(), s[0], 1e-4),
                    fd5(|y| nets.value_at(&env, &[s[0], y]).unwrap(), s[1], 1e-6),
                ];
                let oracle = effective_reward(&nets, &env, &s, a, &hp).unwrap()
                    + v[0] * dv[0]
                    + v[1] * dv[1]
                    - hp.decay_rate() * nets.value_at(&env, &s).unwrap();
                let got = advantage(&nets, &env, &s, a, &hp).unwrap();
                assert!(
                    rel_err(got, oracle, 1e-6) < 1e-6,
                    "{s:?}/{a}: {got} vs {oracle}"
                );
            }
        }
    }
}

#[test]
fn batch_gradients_are_means_of_single_sample_gradients() {
    let hp = Hyperparams::default();
    let env = MountainCar::default();
    let nets = UmbrellaNets::new(&env, SMALL, 31).unwrap();
    let mut r = rng(16);
    let states: Vec<State> = (0..3).map(|_| env.sample_state(&mut r)).collect();
    let batch = evaluate_batch(&nets, &env, states, vec![0, 1, 1], &hp).unwrap();
    let full = estimate_gradients(&nets, &env, &batch, &hp).unwrap();
    let singles: Vec<_> = (0..3)
        .map(|i| estimate_gradients(&nets, &env, &batch.single(i), &hp).unwrap())
        .collect();
    for (name, whole, parts) in [
        (
            "policy",
            &full.policy,
            singles.iter().map(|g| &g.policy).collect::<Vec<_>>(),
        ),
        (
            "value",
            &full.value,
            singles.iter().map(|g| &g.value).collect(),
        ),
        (
            "density",
            &full.density,
            singles.iter().map(|g| &g.density).collect(),
        ),
    ] {
        for k in 0..whole.len() {
            let mean = (parts[0][k] + parts[1][k] + parts[2][k]) / 3.0;
            assert!(
                (whole[k] - mean).abs() < 1e-12,
                "{name}[{k}]: {} vs {mean}",
                whole[k]
            );
        }
    }
}

#[test]
fn density_relaxes_toward_a_static_initial_density() {
    let hp = Hyperparams {
        batch_size: 64,
        lr_policy: 0.0,
        lr_value: 0.0,
        lr_density: 3e-4,
        wd_density: 0.0,
        ..Hyperparams::default()
    };
    let env = StubEnv {
        p0: Box::new(|s| 0.25 * (1.0 + 0.5 * (1.5 * s[0]).sin() * (s[1]).cos())),
        ..StubEnv::still(2, 0.0)
    };
    let mut nets = UmbrellaNets::new(&env, SMALL, 41).unwrap();
    let mut adam = AdamStates::new(&nets, &hp);
    let mut r = rng(17);
    let windows: Vec<f64> = (0..5)
        .map(|_| {
            (0..1000)
                .map(|_| {
                    train_step(&mut nets, &env, &hp, &mut r, &mut adam)
                        .unwrap()
                        .batch
                        .mean_abs_growth
                })
                .sum::<f64>()
                / 1000.0
        })
        .collect();
    for w in windows.windows(2) {
        assert!(w[1] < w[0], "{windows:?}");
    }
}

#[test]
fn empty_and_mismatched_batches_are_rejected() {
    let hp = Hyperparams::default();
    let env = MountainCar::default();
    let nets = UmbrellaNets::new(&env, SMALL, 1).unwrap();
    assert!(evaluate_batch(&nets, &env, vec![], vec![], &hp).is_err());
    assert!(evaluate_batch(&nets, &env, vec![[0.0, 0.0]], vec![], &hp).is_err());
    assert!(evaluate_batch(&nets, &env, vec![[0.0, 0.0]], vec![2], &hp).is_err());
    assert!(growth_rate(&nets, &env, &[0.0, 0.0], &[], &hp).is_err());
}
