"""Quick end-to-end check of the Python bindings.

Build first, e.g. `maturin develop -m crates/py/Cargo.toml`, then run
`python crates/py/python/smoke_test.py`.
"""

import math

import umbrella_rl as ur


def main():
    assert set(ur.environments()) == {"mvmc", "standup"}

    car = ur.Environment("mvmc")
    assert car.n_actions == 2 and car.repr_dim == 3
    assert car.reward((0.0, 0.0), 0) == 1.0
    assert car.divergence((0.3, 0.01), 1) == 0.0
    starts = car.sample_initial(5, seed=1)
    assert len(starts) == 5 and all(car.initial_density(s) > 0 for s in starts)

    t = ur.Trainer("mvmc", seed=3, width=16, batch_size=64)
    probs = t.policy((0.5, 0.0))
    assert abs(sum(probs) - 1.0) < 1e-12
    diag = t.step(5)
    assert diag["iteration"] == 5 and math.isfinite(diag["mean_abs_growth"])
    assert math.isfinite(t.advantage((0.5, 0.0), 1))
    assert math.isfinite(t.growth_rate((0.5, 0.0), [0, 1]))

    # checkpoints round-trip exactly
    clone = ur.Trainer.from_checkpoint(t.checkpoint())
    assert clone.iteration == 5 and clone.checkpoint() == t.checkpoint()
    t.step(2)
    clone.step(2)
    assert clone.value((0.1, 0.02)) == t.value((0.1, 0.02))

    stats = t.evaluate(n_runs=2, total_time=2.0)
    assert len(stats["returns"]) == 2
    assert len(t.policy_map(4)) == 16

    vi = ur.value_iteration("mvmc", res=(21, 21), eval_runs=2)
    assert len(vi["values"]) == 441 and min(vi["values"]) >= 0.0

    try:
        ur.Trainer("mvmc", not_a_knob=1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown hyperparameter accepted")

    print("umbrella_rl smoke test passed")


if __name__ == "__main__":
    main()
