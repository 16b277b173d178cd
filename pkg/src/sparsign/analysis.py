"""Closed-form bounds on wrong aggregation and their exhaustive oracles.

Conventions: a worker's ternary vote is ``+1`` when it agrees with the sign
of the true average, ``-1`` when it opposes it and ``0`` otherwise. An
aggregate whose vote sum is ``<= 0`` counts as a wrong aggregation, so ties
are wrong.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core import resolve_rng

MAX_ENUMERATION_WORKERS = 12


class HypothesisViolated(ValueError):
    """Raised when the average correct-vote probability does not exceed the wrong one."""


@dataclass(frozen=True)
class WorkerOutcomeDist:
    """Per-worker probabilities of an opposing (``p``) and agreeing (``q``) vote."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=np.float64))
        q = np.atleast_1d(np.asarray(self.q, dtype=np.float64))
        if p.shape != q.shape or p.ndim != 1 or p.size == 0:
            raise ValueError("p and q must be nonempty 1-D arrays of equal length")
        if np.any(p < 0) or np.any(q < 0) or np.any(p + q > 1 + 1e-12):
            raise ValueError("need p_m, q_m >= 0 and p_m + q_m <= 1 for every worker")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def homogeneous(cls, p: float, q: float, num_workers: int) -> "WorkerOutcomeDist":
        return cls(np.full(num_workers, p), np.full(num_workers, q))

    @property
    def num_workers(self) -> int:
        return self.p.size

    @property
    def p_bar(self) -> float:
        return float(self.p.mean())

    @property
    def q_bar(self) -> float:
        return float(self.q.mean())


def theorem1_bound(p_bar: float, q_bar: float, num_workers: int) -> float:
    """Upper bound ``[1 - (sqrt(q_bar) - sqrt(p_bar))^2]^M`` on wrong aggregation."""
    if p_bar < 0 or q_bar < 0 or p_bar + q_bar > 1 + 1e-12:
        raise ValueError(f"infeasible averages p_bar={p_bar}, q_bar={q_bar}")
    if num_workers < 1:
        raise ValueError("need at least one worker")
    if not q_bar > p_bar:
        raise HypothesisViolated(f"bound requires q_bar > p_bar (got {q_bar} <= {p_bar})")
    gap = math.sqrt(q_bar) - math.sqrt(p_bar)
    return (1.0 - gap * gap) ** num_workers


def brute_force_wrong_prob(dist: WorkerOutcomeDist, max_workers: int = MAX_ENUMERATION_WORKERS) -> float:
    """Exact wrong-aggregation probability by enumerating all ``3^M`` outcomes."""
    if dist.num_workers > max_workers:
        raise ValueError(f"enumeration over {dist.num_workers} workers exceeds limit {max_workers}")
    return float(kernels.wrong_prob_enumerate(dist.p, dist.q))


def _partition(u: np.ndarray):
    mean = u.mean()
    if mean == 0:
        raise ValueError("average of u is zero; the target sign is undefined")
    target = np.sign(mean)
    agree = np.sign(u) == target
    return target, agree


def corollary1_pq(u, budgets, inclusion_prob) -> tuple[float, float]:
    """Average opposing/agreeing vote probabilities for sparsign with sampling.

    ``budgets`` and ``inclusion_prob`` may be scalars or per-worker arrays.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    M = u.size
    b = np.broadcast_to(np.asarray(budgets, dtype=np.float64), (M,))
    ps = np.broadcast_to(np.asarray(inclusion_prob, dtype=np.float64), (M,))
    if np.any(b < 0) or np.any(ps < 0) or np.any(ps > 1):
        raise ValueError("budgets must be nonnegative and inclusion probabilities in [0, 1]")
    if np.any(np.abs(u) * b > 1 + 1e-12):
        raise ValueError("need |u_m| * B_m <= 1 for every worker")
    _, agree = _partition(u)
    mass = np.abs(u * b * ps)
    return float(mass[~agree].sum() / M), float(mass[agree].sum() / M)


def outcome_dist_for_sparsign(u, budgets, inclusion_prob) -> WorkerOutcomeDist:
    """Per-worker vote distribution under sparsign and independent inclusion."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    M = u.size
    b = np.broadcast_to(np.asarray(budgets, dtype=np.float64), (M,))
    ps = np.broadcast_to(np.asarray(inclusion_prob, dtype=np.float64), (M,))
    _, agree = _partition(u)
    fire = np.minimum(np.abs(u) * b, 1.0) * ps
    return WorkerOutcomeDist(np.where(agree, 0.0, fire), np.where(agree, fire, 0.0))


def simulate_votes(
    u,
    budgets,
    trials: int,
    rng=None,
    sample_size: Optional[int] = None,
    inclusion_prob: Optional[float] = None,
) -> dict:
    """Monte Carlo of sparsign voting with worker sampling.

    Workers are sampled either as a uniform fixed-size subset (``sample_size``)
    or independently with probability ``inclusion_prob``; unsampled workers
    vote 0. Returns per-trial arrays ``p_hat``, ``q_hat`` (fractions of all
    ``M`` workers voting against / with the target sign) and ``wrong``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    M = u.size
    b = np.broadcast_to(np.asarray(budgets, dtype=np.float64), (M,))
    target, _ = _partition(u)
    gen = resolve_rng(rng)
    if (sample_size is None) == (inclusion_prob is None):
        raise ValueError("give exactly one of sample_size and inclusion_prob")
    if sample_size is not None:
        if not 1 <= sample_size <= M:
            raise ValueError("sample_size must lie in [1, M]")
        keys = gen.random((trials, M))
        ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
        included = ranks < sample_size
    else:
        included = gen.random((trials, M)) < inclusion_prob
    fire = gen.random((trials, M)) < np.minimum(np.abs(u) * b, 1.0)
    votes = (np.sign(u) * target).astype(np.int64) * (fire & included)
    return {
        "p_hat": (votes < 0).sum(axis=1) / M,
        "q_hat": (votes > 0).sum(axis=1) / M,
        "wrong": votes.sum(axis=1) <= 0,
    }


def kappa_diagnostic(gradients, budget, inclusion_prob: float) -> np.ndarray:
    """Per-coordinate ``[1 - B p_s (|avg| / (sqrt(a) + sqrt(b)))^2]^M``.

    ``a`` and ``b`` are the ``1/M``-normalised magnitude sums of workers whose
    sign agrees / disagrees with the average. This is the realised value for
    one gradient snapshot, not its expectation. Coordinates with a zero
    average are ``nan``. The bracket is clipped to ``[0, 1]``.
    """
    g = np.atleast_2d(np.asarray(gradients, dtype=np.float64))
    M, d = g.shape
    b = np.broadcast_to(np.asarray(budget, dtype=np.float64), (d,))
    avg = g.mean(axis=0)
    same = np.sign(g) == np.sign(avg)[None, :]
    agree_mass = np.where(same, np.abs(g), 0.0).sum(axis=0) / M
    oppose_mass = np.where(same, 0.0, np.abs(g)).sum(axis=0) / M
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(avg) / (np.sqrt(agree_mass) + np.sqrt(oppose_mass))
        bracket = np.clip(1.0 - b * inclusion_prob * ratio**2, 0.0, 1.0)
        kappa = bracket**M
    return np.where(avg == 0, np.nan, kappa)


def theorem3_bound(
    F0_minus_Fstar: float, L: float, beta: float, B: float, tau: int, d: int, T: int
) -> float:
    """Right-hand side of the average squared-gradient-norm bound for the
    error-feedback algorithm with local steps, using ``eta_L = 1/(sqrt(Td) tau)``
    and ``eta = tau``."""
    for name, val in (("F0_minus_Fstar", F0_minus_Fstar), ("L", L), ("beta", beta), ("B", B),
                      ("tau", tau), ("d", d), ("T", T)):
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val!r}")
    denom = B * tau * math.sqrt(T)
    return (
        F0_minus_Fstar * math.sqrt(d) / denom
        + (1.0 + L + L * L * beta) * math.sqrt(d) / denom
        + L * L * (tau + 1) * (2 * tau + 1) / (6.0 * T * tau * tau)
    )


@dataclass
class BoundRow:
    p_bar: float
    q_bar: float
    num_workers: int
    exact_prob: Optional[float]
    bound: Optional[float]
    status: str

    @property
    def slack(self) -> Optional[float]:
        if self.exact_prob is None or self.bound is None:
            return None
        return self.bound - self.exact_prob


def check_distribution(dist: WorkerOutcomeDist) -> BoundRow:
    """Compare the enumerated probability with the closed-form bound."""
    p_bar, q_bar, M = dist.p_bar, dist.q_bar, dist.num_workers
    exact = brute_force_wrong_prob(dist)
    if not q_bar > p_bar:
        return BoundRow(p_bar, q_bar, M, exact, None, "hypothesis violated")
    bound = theorem1_bound(p_bar, q_bar, M)
    # tolerance for rounding in the enumeration sum
    ok = bound - exact >= -1e-12
    return BoundRow(p_bar, q_bar, M, exact, bound, "ok" if ok else "VIOLATION")


def sweep(p_values: Sequence[float], q_offsets_or_values, workers: Sequence[int], offset: bool = True):
    """Bound rows for homogeneous distributions over a parameter grid."""
    rows = []
    for p in p_values:
        for qv in q_offsets_or_values:
            q = p + qv if offset else qv
            if p + q > 1 + 1e-12 or q < 0:
                continue
            for M in workers:
                rows.append(check_distribution(WorkerOutcomeDist.homogeneous(p, min(q, 1 - p), M)))
    return rows
