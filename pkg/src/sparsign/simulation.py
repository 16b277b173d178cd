"""Training loops for compressed distributed SGD with worker sampling.

``run_alg1``: each sampled worker sends ``Q(g_m)``; the server broadcasts the
aggregate (majority vote by default) and every worker steps by ``eta``.

``run_alg2``: each sampled worker takes ``tau`` local sparsign steps, sends a
sparsign-compressed sum of its local messages, and the server applies a
scaled-sign compressor with a server-side residual (error feedback).

Randomness is drawn from streams keyed by ``(round, worker, purpose)``, so a
run is a pure function of its configuration and seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import List, Optional

import numpy as np

from . import kernels
from .aggregation import RULES, ServerState, aggregate, message_sum
from .analysis import kappa_diagnostic
from .coding import downlink_cost, message_cost, ternary_cost
from .compressors import CompressorConfig, compress, sparsign_dense, sparsign_many
from .core import RngStream, densify
from .objectives import HeterogeneousProblem

RECURRENCE_TOL = 1e-10


@dataclass(frozen=True)
class RunConfig:
    algorithm: str
    rounds: int
    workers: int
    sample_size: int
    compressor: Optional[CompressorConfig] = None
    local_budget: Optional[float] = None
    global_budget: Optional[float] = None
    local_steps: int = 1
    eta: Optional[float] = None
    eta_local: Optional[float] = None
    master_seed: int = 0
    server_rule: Optional[str] = None
    batch_size: Optional[int] = None
    track_kappa: bool = False
    debug: bool = False

    def __post_init__(self):
        if self.algorithm not in ("alg1", "alg2"):
            raise ValueError(f"algorithm must be 'alg1' or 'alg2', got {self.algorithm!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be positive")
        if not 1 <= self.sample_size <= self.workers:
            raise ValueError(f"sample_size must lie in [1, {self.workers}], got {self.sample_size}")
        if self.local_steps < 1:
            raise ValueError("local_steps must be at least 1")
        for name in ("eta", "eta_local"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")
        if self.server_rule is not None and self.server_rule not in RULES:
            raise ValueError(f"unknown server rule {self.server_rule!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.algorithm == "alg1":
            if self.compressor is None:
                raise ValueError("alg1 needs a compressor")
            if self.local_steps != 1:
                raise ValueError("alg1 takes no local steps")
        else:
            for name in ("local_budget", "global_budget"):
                val = getattr(self, name)
                if val is None or val < 0:
                    raise ValueError(f"alg2 needs a nonnegative {name}")

    @property
    def rule(self) -> str:
        if self.server_rule is not None:
            return self.server_rule
        return "majority_vote_sign" if self.algorithm == "alg1" else "scaled_sign_with_ef"

    def learning_rates(self, dim: int) -> tuple[float, float]:
        """``(eta, eta_local)`` with unset values filled from the convergence theory.

        alg1: ``eta = 1/sqrt(T d)``. alg2: ``eta_local = 1/(sqrt(T d) tau)``,
        ``eta = tau``. alg1 has no local rate and reports ``1.0``.
        """
        root = math.sqrt(self.rounds * dim)
        if self.algorithm == "alg1":
            return (self.eta if self.eta is not None else 1.0 / root), 1.0
        eta_l = self.eta_local if self.eta_local is not None else 1.0 / (root * self.local_steps)
        eta = self.eta if self.eta is not None else float(self.local_steps)
        return eta, eta_l

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if v is not None}
        if self.compressor is not None:
            out["compressor"] = self.compressor.to_dict()
        return out


@dataclass(frozen=True)
class RoundRecord:
    round: int
    objective_value: float
    wrong_agg_fraction: Optional[float]
    grad_l1: float
    uplink_bits: float
    downlink_bits: float
    kappa_mean: Optional[float] = None
    uplink_nnz: float = 0.0


@dataclass
class RunResult:
    records: List[RoundRecord]
    initial_objective: float
    final_w: np.ndarray
    recurrence_max_deviation: Optional[float] = None

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def final_objective(self) -> float:
        return self.records[-1].objective_value

    def column(self, name: str) -> np.ndarray:
        return np.array(
            [np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records], dtype=float
        )

    def mean_wrong_aggregation(self) -> float:
        return float(np.nanmean(self.column("wrong_agg_fraction")))

    def rounds_to_reach(self, level: float) -> Optional[int]:
        """First round (1-based count of completed rounds) with objective <= level."""
        hits = np.flatnonzero(self.column("objective_value") <= level)
        return int(hits[0]) + 1 if hits.size else None

    def cumulative_uplink(self) -> np.ndarray:
        return np.cumsum(self.column("uplink_bits"))


def measure_wrong_aggregation(true_avg_grad, aggregated) -> Optional[float]:
    """Fraction of coordinates whose aggregated sign differs from the true sign.

    Coordinates with a zero true gradient are excluded; an aggregated zero on
    any other coordinate counts as wrong. Returns ``None`` when the true
    gradient is identically zero.
    """
    true = np.asarray(true_avg_grad, dtype=np.float64)
    agg = densify(aggregated) if not isinstance(aggregated, np.ndarray) else aggregated
    if agg.shape != true.shape:
        raise ValueError("dimension mismatch between true gradient and aggregate")
    target = np.sign(true)
    mask = target != 0
    if not mask.any():
        return None
    return float(np.mean(np.sign(agg[mask]) != target[mask]))


def sample_workers(num_workers: int, sample_size: int, stream: RngStream) -> np.ndarray:
    """Uniform subset of fixed size, returned sorted."""
    if sample_size == num_workers:
        return np.arange(num_workers)
    chosen = stream.generator().choice(num_workers, size=sample_size, replace=False)
    return np.sort(chosen)


def _streams(seed: int, t: int):
    root = RngStream(seed)
    return (
        lambda m, purpose, c=0: root.child(t, m, purpose, c),
        root.child(t, -1, "sample"),
    )


def _check_problem(problem: HeterogeneousProblem, config: RunConfig):
    if problem.num_workers != config.workers:
        raise ValueError(
            f"config has {config.workers} workers but the problem has {problem.num_workers}"
        )


def _kappa(problem, w, config, p_s) -> Optional[float]:
    if not config.track_kappa:
        return None
    if config.algorithm == "alg1":
        if config.compressor.kind != "sparsign":
            return None
        budget = config.compressor.budget
    else:
        budget = config.local_budget * config.global_budget
    grads = problem.local_grads(range(problem.num_workers), w)
    kap = kappa_diagnostic(grads, budget, p_s)
    return float(np.nanmean(kap)) if np.any(np.isfinite(kap)) else None


def run_alg1(problem: HeterogeneousProblem, config: RunConfig) -> RunResult:
    if config.algorithm != "alg1":
        raise ValueError("run_alg1 needs config.algorithm == 'alg1'")
    _check_problem(problem, config)
    comp = config.compressor
    eta, _ = config.learning_rates(problem.dim)
    rule = config.rule
    state = ServerState.initial(problem.dim, rule)
    w = problem.initial_point()
    initial = problem.objective(w)
    p_s = config.sample_size / config.workers
    fast_sparsign = comp.kind == "sparsign" and not problem.stochastic and rule == "majority_vote_sign"
    records = []
    for t in range(config.rounds):
        stream, sample_stream = _streams(config.master_seed, t)
        chosen = sample_workers(config.workers, config.sample_size, sample_stream)
        true_grad = problem.global_grad(w)
        kappa = _kappa(problem, w, config, p_s)
        if fast_sparsign:
            grads = problem.local_grads(chosen, w)
            votes = sparsign_many(grads, comp.budget, [stream(m, "compress") for m in chosen])
            broadcast = np.sign(kernels.vote_sum(votes)).astype(np.float64)
            nnz = np.count_nonzero(votes, axis=1)
            uplink = float(sum(ternary_cost(int(k), problem.dim) for k in nnz))
        else:
            grads = [
                problem.stochastic_grad(m, w, config.batch_size, stream(m, "batch"))
                for m in chosen
            ]
            shared = None
            if comp.kind == "terngrad":
                shared = max(float(np.max(np.abs(g))) for g in grads)
            msgs = [
                compress(comp, g, stream(m, "compress") if comp.stochastic else None, shared)
                for m, g in zip(chosen, grads)
            ]
            broadcast, state = aggregate(state, msgs)
            nnz = [getattr(msg, "nnz", problem.dim) for msg in msgs]
            uplink = float(sum(message_cost(msg, comp) for msg in msgs))
        wrong = measure_wrong_aggregation(true_grad, broadcast)
        w = w - eta * broadcast
        if not np.all(np.isfinite(w)):
            raise FloatingPointError(f"iterate became non-finite at round {t}")
        records.append(
            RoundRecord(
                round=t,
                objective_value=float(problem.objective(w)),
                wrong_agg_fraction=wrong,
                grad_l1=float(np.abs(true_grad).sum()),
                uplink_bits=uplink,
                downlink_bits=downlink_cost(rule, problem.dim),
                kappa_mean=kappa,
                uplink_nnz=float(np.mean(nnz)),
            )
        )
    return RunResult(records, float(initial), w)


def _local_update(problem, w, m, config, stream, eta_l):
    """``tau`` sparsign steps from ``w``; returns the sum of the local messages."""
    w_local = w.copy()
    acc = np.zeros(problem.dim)
    for c in range(config.local_steps):
        g = problem.stochastic_grad(m, w_local, config.batch_size, stream(m, "batch", c))
        q = sparsign_dense(g, config.local_budget, stream(m, "compress", c)).astype(np.float64)
        w_local = w_local - eta_l * q
        acc += q
    return acc


def run_alg2(problem: HeterogeneousProblem, config: RunConfig) -> RunResult:
    if config.algorithm != "alg2":
        raise ValueError("run_alg2 needs config.algorithm == 'alg2'")
    _check_problem(problem, config)
    eta, eta_l = config.learning_rates(problem.dim)
    step = eta * eta_l
    rule = config.rule
    state = ServerState.initial(problem.dim, rule)
    w = problem.initial_point()
    initial = problem.objective(w)
    p_s = config.sample_size / config.workers
    records = []
    recurrence_dev = 0.0
    for t in range(config.rounds):
        stream, sample_stream = _streams(config.master_seed, t)
        chosen = sample_workers(config.workers, config.sample_size, sample_stream)
        true_grad = problem.global_grad(w)
        kappa = _kappa(problem, w, config, p_s)
        deltas = []
        for m in chosen:
            acc = _local_update(problem, w, m, config, stream, eta_l)
            deltas.append(sparsign_dense(acc, config.global_budget, stream(m, "outer")).astype(np.float64))
        y_before = w - step * state.residual
        avg = message_sum(deltas) / len(deltas)
        broadcast, state = aggregate(state, deltas)
        wrong = measure_wrong_aggregation(true_grad, broadcast)
        w = w - step * broadcast
        if not np.all(np.isfinite(w)):
            raise FloatingPointError(f"iterate became non-finite at round {t}")
        y_after = w - step * state.residual
        if rule == "scaled_sign_with_ef":
            dev = float(np.max(np.abs(y_after - (y_before - step * avg))))
            recurrence_dev = max(recurrence_dev, dev)
            if config.debug and dev >= RECURRENCE_TOL:
                raise AssertionError(f"residual recurrence broken at round {t}: deviation {dev:.3e}")
        nnz = [np.count_nonzero(dl) for dl in deltas]
        records.append(
            RoundRecord(
                round=t,
                objective_value=float(problem.objective(w)),
                wrong_agg_fraction=wrong,
                grad_l1=float(np.abs(true_grad).sum()),
                uplink_bits=float(sum(ternary_cost(int(k), problem.dim) for k in nnz)),
                downlink_bits=downlink_cost(rule, problem.dim),
                kappa_mean=kappa,
                uplink_nnz=float(np.mean(nnz)),
            )
        )
    return RunResult(records, float(initial), w, recurrence_dev if rule == "scaled_sign_with_ef" else None)


def run(problem: HeterogeneousProblem, config: RunConfig) -> RunResult:
    return run_alg1(problem, config) if config.algorithm == "alg1" else run_alg2(problem, config)
