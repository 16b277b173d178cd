import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsign.analysis import (
    HypothesisViolated,
    WorkerOutcomeDist,
    brute_force_wrong_prob,
    check_distribution,
    corollary1_pq,
    kappa_diagnostic,
    outcome_dist_for_sparsign,
    simulate_votes,
    sweep,
    theorem1_bound,
    theorem3_bound,
)


def convolution_oracle(p, q):
    """P(vote sum <= 0) via the exact pmf of the sum, built by convolution."""
    pmf = np.array([1.0])  # support starts at 0
    offset = 0
    for pm, qm in zip(p, q):
        pmf = np.convolve(pmf, [pm, 1 - pm - qm, qm])
        offset -= 1
    support = np.arange(pmf.size) + offset
    return float(pmf[support <= 0].sum())


def test_wrong_aggregation_bound_examples():
    assert theorem1_bound(0.0, 1.0, 4) == 0.0
    assert theorem1_bound(0.1, 0.4, 2) == pytest.approx(0.81, abs=1e-15)
    with pytest.raises(HypothesisViolated):
        theorem1_bound(0.3, 0.3, 2)
    with pytest.raises(ValueError):
        theorem1_bound(0.6, 0.7, 2)


def test_brute_force_examples():
    assert brute_force_wrong_prob(WorkerOutcomeDist([0.0], [1.0])) == 0.0
    assert brute_force_wrong_prob(WorkerOutcomeDist([0.0], [0.6])) == pytest.approx(0.4, abs=1e-15)
    dist = WorkerOutcomeDist.homogeneous(0.2, 0.6, 3)
    # direct enumeration of all 27 outcomes
    direct = 0.0
    for votes in itertools.product((-1, 0, 1), repeat=3):
        prob = math.prod({-1: 0.2, 0: 0.2, 1: 0.6}[v] for v in votes)
        direct += prob if sum(votes) <= 0 else 0.0
    exact = brute_force_wrong_prob(dist)
    assert exact == pytest.approx(direct, abs=1e-15)
    assert exact <= theorem1_bound(0.2, 0.6, 3)


def test_brute_force_worker_limit():
    with pytest.raises(ValueError):
        brute_force_wrong_prob(WorkerOutcomeDist.homogeneous(0.1, 0.2, 13))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_enumeration_matches_convolution(M, seed):
    gen = np.random.default_rng(seed)
    raw = gen.dirichlet(np.ones(3), size=M)
    p, q = raw[:, 0], raw[:, 1]
    exact = brute_force_wrong_prob(WorkerOutcomeDist(p, q))
    assert exact == pytest.approx(convolution_oracle(p, q), abs=1e-12)


def test_invalid_distributions():
    for p, q in (([0.5], [0.6]), ([-0.1], [0.5]), ([0.1, 0.2], [0.3]), ([], [])):
        with pytest.raises(ValueError):
            WorkerOutcomeDist(p, q)


def test_sampled_vote_probability_examples():
    assert corollary1_pq([1, 1, 1], 1.0, 1.0) == (0.0, 1.0)
    p_bar, q_bar = corollary1_pq([3, -1, -1], 0.2, 0.5)
    assert p_bar == pytest.approx(1 / 15, abs=1e-15)
    assert q_bar == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(ValueError):
        corollary1_pq([1, -1], 0.1, 1.0)
    with pytest.raises(ValueError):
        corollary1_pq([2.0, 1.0], 1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_sampled_vote_gap_identity(M, seed):
    gen = np.random.default_rng(seed)
    u = gen.uniform(-1, 1, size=M)
    if abs(u.mean()) < 1e-9:
        return
    B, ps = 0.7, gen.uniform(0.1, 1.0)
    p_bar, q_bar = corollary1_pq(u, B, ps)
    assert q_bar - p_bar == pytest.approx(B * ps * abs(u.mean()), abs=1e-12)


def test_outcome_dist_matches_vote_probabilities():
    u = np.array([0.5, -0.2, 0.9, -0.1])
    dist = outcome_dist_for_sparsign(u, 0.8, 0.5)
    assert (dist.p_bar, dist.q_bar) == pytest.approx(corollary1_pq(u, 0.8, 0.5))


def test_simulate_votes_fixed_sample_size():
    out = simulate_votes([0.5, -0.5, 0.9], 1.0, 2000, 0, sample_size=2)
    assert np.all(out["p_hat"] + out["q_hat"] <= 2 / 3 + 1e-12)
    with pytest.raises(ValueError):
        simulate_votes([0.5, 0.1], 1.0, 5, 0)


def test_kappa_examples():
    g = np.tile([0.5, -2.0, 0.25], (4, 1))
    np.testing.assert_allclose(kappa_diagnostic(g, 1 / np.abs(g[0]), 1.0), 0.0, atol=1e-15)
    np.testing.assert_array_equal(kappa_diagnostic(g, 0.0, 1.0), 1.0)
    k = kappa_diagnostic(np.array([[1.0, 0.0], [-1.0, 0.0]]), 1.0, 1.0)
    assert np.isnan(k).all()


def test_kappa_decreases_with_duplication(rng):
    g = rng.normal(size=(5, 8)) + 0.3
    k1 = kappa_diagnostic(g, 0.2, 0.5)
    k2 = kappa_diagnostic(np.vstack([g, g]), 0.2, 0.5)
    inner = (k1 > 0) & (k1 < 1)
    assert inner.any()
    assert np.all(k2[inner] < k1[inner])


def test_convergence_bound_decreasing_in_T():
    vals = [theorem3_bound(5.0, 2.0, 1.0, 0.5, 2, 100, T) for T in (10**k for k in range(2, 7))]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        theorem3_bound(5.0, 2.0, 1.0, 0.0, 2, 100, 10)


def test_check_distribution_rows():
    row = check_distribution(WorkerOutcomeDist([0.0], [1.0]))
    assert (row.exact_prob, row.bound, row.slack, row.status) == (0.0, 0.0, 0.0, "ok")
    assert check_distribution(WorkerOutcomeDist([0.4], [0.3])).status == "hypothesis violated"


def test_sweep_has_nonnegative_slack():
    rows = sweep([0.05 * k for k in range(1, 10)], [0.1], range(1, 9))
    assert len(rows) == 72
    assert all(r.status == "ok" and r.slack >= 0 for r in rows)
