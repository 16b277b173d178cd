import numpy as np
import pytest

from sparsign.compressors import CompressorConfig, sparsign_many
from sparsign.core import RngStream
from sparsign.objectives import QuadraticProblem, ScaledRosenbrock, SyntheticClassification
from sparsign.simulation import RunConfig, measure_wrong_aggregation, run, run_alg1, run_alg2

SIGN = CompressorConfig("sign")


def records_equal(a, b):
    return [r.__dict__ for r in a.records] == [r.__dict__ for r in b.records]


def small_classification(seed=0):
    return SyntheticClassification.generate(
        num_classes=3, num_workers=8, samples_per_worker=20, alpha=0.3, rng=RngStream(seed), feature_dim=4
    )


def test_measure_wrong_aggregation_examples():
    true = np.array([0.5, -2.0, 1.0])
    assert measure_wrong_aggregation(true, np.sign(true)) == 0.0
    assert measure_wrong_aggregation(true, -np.sign(true)) == 1.0
    assert measure_wrong_aggregation([1, -1, 2], np.array([1.0, 1.0, 0.0])) == pytest.approx(2 / 3)
    assert measure_wrong_aggregation([0.0, 0.0], np.array([1.0, -1.0])) is None
    # coordinates whose true gradient is zero are excluded
    assert measure_wrong_aggregation([0.0, 1.0], np.array([1.0, 1.0])) == 0.0


def test_single_worker_sign_descent():
    prob = QuadraticProblem(np.zeros((1, 1)), init=[1.0])
    w = 1.0
    for k in range(1, 10):
        res = run(prob, RunConfig("alg1", k, 1, 1, compressor=SIGN, eta=0.1))
        w = w - 0.1
        assert res.final_w[0] == w
    # after crossing zero the iterate oscillates around the minimizer
    res = run(prob, RunConfig("alg1", 12, 1, 1, compressor=SIGN, eta=0.1))
    assert abs(res.final_w[0]) < 0.1 + 1e-12


def test_deterministic_sign_fails_on_adversarial_rosenbrock():
    prob = ScaledRosenbrock.sample(100, 80, rng=RngStream(0))
    res = run(prob, RunConfig("alg1", 50, 100, 100, compressor=SIGN, eta=0.005))
    assert np.all(res.column("wrong_agg_fraction") == 1.0)
    assert res.final_objective >= res.initial_objective


def test_sparsign_converges_on_adversarial_rosenbrock():
    prob = ScaledRosenbrock.sample(100, 80, rng=RngStream(0))
    cfg = RunConfig("alg1", 500, 100, 10, compressor=CompressorConfig("sparsign", budget=0.01), eta=0.005)
    res = run(prob, cfg)
    assert res.mean_wrong_aggregation() < 0.5
    assert res.final_objective < res.initial_objective


def test_reproducibility():
    prob = small_classification()
    cfg = RunConfig("alg1", 30, 8, 3, compressor=CompressorConfig("sparsign", budget=2.0), batch_size=5, master_seed=4)
    assert records_equal(run(prob, cfg), run(prob, cfg))
    other = run(prob, RunConfig(**{**cfg.__dict__, "master_seed": 5}))
    assert not records_equal(run(prob, cfg), other)


def test_worker_order_independence(rng):
    grads = rng.normal(size=(5, 12))
    streams = [RngStream(3).child(0, m, "compress") for m in range(5)]
    forward = sparsign_many(grads, 1.0, streams)
    backward = sparsign_many(grads[::-1], 1.0, streams[::-1])
    np.testing.assert_array_equal(forward, backward[::-1])


def test_fast_and_generic_paths_agree():
    # the noise-free sparsign path batches workers; routing through the mean
    # rule and back must not change the compressed votes
    prob = ScaledRosenbrock.sample(20, 10, rng=RngStream(2))
    comp = CompressorConfig("sparsign", budget=0.01)
    a = run(prob, RunConfig("alg1", 40, 20, 5, compressor=comp, eta=0.005))

    class Noisy(ScaledRosenbrock):
        stochastic = True

    b = run(Noisy(prob.scales), RunConfig("alg1", 40, 20, 5, compressor=comp, eta=0.005))
    np.testing.assert_array_equal(a.final_w, b.final_w)


@pytest.mark.parametrize(
    "comp",
    [
        CompressorConfig("terngrad"),
        CompressorConfig("qsgd", levels=4),
        CompressorConfig("qsgd_1bit_linf"),
        CompressorConfig("noisy_sign", noise_stddev=0.1),
        CompressorConfig("scaled_sign"),
    ],
)
def test_baselines_run(comp):
    prob = small_classification()
    rule = "mean" if comp.carries_scale else None
    res = run(prob, RunConfig("alg1", 20, 8, 4, compressor=comp, eta=0.05, server_rule=rule))
    assert len(res) == 20
    assert np.all(res.column("uplink_bits") > 0)


def test_sign_uplink_is_sample_times_dim():
    prob = small_classification()
    res = run(prob, RunConfig("alg1", 5, 8, 3, compressor=SIGN))
    assert np.all(res.column("uplink_bits") == 3 * prob.dim)
    assert np.all(res.column("downlink_bits") == prob.dim)


def test_alg2_residual_recurrence_holds_in_debug_mode():
    prob = small_classification()
    cfg = RunConfig("alg2", 100, 8, 3, local_budget=5.0, global_budget=1.0, local_steps=3,
                    eta_local=0.1, batch_size=4, debug=True)
    res = run_alg2(prob, cfg)
    assert res.recurrence_max_deviation < 1e-10


def test_alg2_degenerates_to_alg1():
    rng = np.random.default_rng(0)
    prob = QuadraticProblem(rng.normal(size=(6, 4)), init=np.full(4, 2.0))
    a1 = run_alg1(prob, RunConfig("alg1", 60, 6, 6, compressor=CompressorConfig("sparsign", budget=0.1), eta=0.05))
    a2 = run_alg2(prob, RunConfig("alg2", 60, 6, 6, local_budget=0.1, global_budget=1.0, eta=1.0,
                                  eta_local=0.05, server_rule="majority_vote_sign"))
    np.testing.assert_array_equal(a1.final_w, a2.final_w)
    np.testing.assert_array_equal(a1.column("objective_value"), a2.column("objective_value"))


def test_default_learning_rates():
    cfg1 = RunConfig("alg1", 100, 4, 2, compressor=SIGN)
    assert cfg1.learning_rates(25) == (1 / 50, 1.0)
    cfg2 = RunConfig("alg2", 100, 4, 2, local_budget=1.0, global_budget=1.0, local_steps=4)
    assert cfg2.learning_rates(25) == (4.0, 1 / 200)
    assert cfg2.rule == "scaled_sign_with_ef" and cfg1.rule == "majority_vote_sign"


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(algorithm="alg3"),
        dict(rounds=0),
        dict(sample_size=0),
        dict(sample_size=5),
        dict(eta=-1.0),
        dict(server_rule="median"),
        dict(compressor=None),
        dict(local_steps=2),
    ],
)
def test_config_validation(kwargs):
    base = dict(algorithm="alg1", rounds=10, workers=4, sample_size=2, compressor=SIGN)
    with pytest.raises(ValueError):
        RunConfig(**{**base, **kwargs})


def test_alg2_requires_budgets():
    with pytest.raises(ValueError):
        RunConfig("alg2", 10, 4, 2, local_budget=1.0)


def test_problem_worker_count_mismatch():
    prob = small_classification()
    with pytest.raises(ValueError):
        run(prob, RunConfig("alg1", 3, 5, 2, compressor=SIGN))


def test_rounds_to_reach_and_cumulative_bits():
    prob = ScaledRosenbrock.sample(10, 2, rng=RngStream(1))
    res = run(prob, RunConfig("alg1", 200, 10, 10, compressor=CompressorConfig("sparsign", budget=0.01), eta=0.005))
    level = 0.5 * res.initial_objective
    k = res.rounds_to_reach(level)
    assert k is not None and res.column("objective_value")[k - 1] <= level
    assert np.all(res.column("objective_value")[: k - 1] > level)
    assert res.rounds_to_reach(-1.0) is None
    assert np.all(np.diff(res.cumulative_uplink()) >= 0)
