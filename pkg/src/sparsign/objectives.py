"""Desk-scale problems with controllable heterogeneity across workers.

Every problem exposes per-worker objectives ``f_m`` and the global objective
``F = (1/M) sum_m f_m``, together with exact gradients.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .core import as_vector, resolve_rng


def rosenbrock_value_grad(x) -> tuple[float, np.ndarray]:
    """Standard Rosenbrock ``sum_{i<d} 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2``."""
    x = as_vector(x, "x")
    if x.size < 2:
        raise ValueError("Rosenbrock needs at least two variables")
    head, tail = x[:-1], x[1:]
    resid = tail - head**2
    value = float(np.sum(100.0 * resid**2 + (1.0 - head) ** 2))
    grad = np.zeros_like(x)
    grad[:-1] = -400.0 * head * resid - 2.0 * (1.0 - head)
    grad[1:] += 200.0 * resid
    return value, grad


class HeterogeneousProblem:
    """Base class; subclasses implement ``local_value`` and ``local_grad``."""

    dim: int
    num_workers: int
    minimizer_hint: Optional[np.ndarray] = None

    def _check_worker(self, worker: int) -> int:
        if not 0 <= int(worker) < self.num_workers:
            raise KeyError(f"unknown worker id {worker!r}")
        return int(worker)

    def local_value(self, worker: int, w) -> float:
        raise NotImplementedError

    def local_grad(self, worker: int, w) -> np.ndarray:
        raise NotImplementedError

    def local_grads(self, workers: Sequence[int], w) -> np.ndarray:
        return np.stack([self.local_grad(m, w) for m in workers])

    def stochastic_grad(self, worker: int, w, batch_size: Optional[int], rng) -> np.ndarray:
        """Noise-free problems return the exact local gradient."""
        return self.local_grad(worker, w)

    @property
    def stochastic(self) -> bool:
        return False

    def global_value(self, w) -> float:
        return float(np.mean([self.local_value(m, w) for m in range(self.num_workers)]))

    def global_grad(self, w) -> np.ndarray:
        return self.local_grads(range(self.num_workers), w).mean(axis=0)

    def objective(self, w) -> float:
        """Value reported in run metrics."""
        return self.global_value(w)

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)


class QuadraticProblem(HeterogeneousProblem):
    """``f_m(w) = 0.5 * a_m * ||w - c_m||^2``."""

    def __init__(self, centers, weights=None, init=None):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        self.num_workers, self.dim = self.centers.shape
        self.weights = (
            np.ones(self.num_workers) if weights is None else np.asarray(weights, dtype=np.float64)
        )
        if self.weights.shape != (self.num_workers,) or np.any(self.weights <= 0):
            raise ValueError("weights must be positive, one per worker")
        self._init = None if init is None else np.broadcast_to(np.asarray(init, float), (self.dim,)).copy()
        self.minimizer_hint = (self.weights[:, None] * self.centers).sum(0) / self.weights.sum()

    def local_value(self, worker, w):
        m = self._check_worker(worker)
        diff = as_vector(w) - self.centers[m]
        return float(0.5 * self.weights[m] * diff @ diff)

    def local_grad(self, worker, w):
        m = self._check_worker(worker)
        return self.weights[m] * (as_vector(w) - self.centers[m])

    def local_grads(self, workers, w):
        idx = np.asarray(list(workers), dtype=np.int64)
        return self.weights[idx, None] * (as_vector(w)[None, :] - self.centers[idx])

    def global_grad(self, w):
        w = as_vector(w)
        return (self.weights.mean() * w) - (self.weights[:, None] * self.centers).mean(axis=0)

    def initial_point(self):
        return np.ones(self.dim) if self._init is None else self._init.copy()


def sample_scales(
    num_workers: int,
    num_negative: int,
    rng=None,
    negative_mass: float = 0.01,
) -> np.ndarray:
    """Random worker scales with ``sum(v) == 1`` and exactly ``num_negative`` negatives.

    Magnitudes are ``|N(0, 1)|`` draws. The negative group is rescaled to total
    magnitude ``negative_mass`` and the positive group to ``1 + negative_mass``.
    """
    if num_workers < 1 or not 0 <= num_negative < num_workers:
        raise ValueError(
            f"need 0 <= num_negative < num_workers, got {num_negative} of {num_workers}"
        )
    if negative_mass <= 0 and num_negative > 0:
        raise ValueError("negative_mass must be positive when there are negative scales")
    gen = resolve_rng(rng)
    mags = np.abs(gen.standard_normal(num_workers))
    mags = np.where(mags == 0.0, np.finfo(float).tiny, mags)
    negative = np.zeros(num_workers, dtype=bool)
    negative[gen.permutation(num_workers)[:num_negative]] = True
    v = np.empty(num_workers)
    pos_total = 1.0 + (negative_mass if num_negative else 0.0)
    v[~negative] = mags[~negative] / mags[~negative].sum() * pos_total
    if num_negative:
        v[negative] = -mags[negative] / mags[negative].sum() * negative_mass
    return v


class ScaledRosenbrock(HeterogeneousProblem):
    """Worker ``m`` sees ``v_m * F`` for the Rosenbrock function ``F``.

    Because ``sum(v) == 1`` the global objective is ``F / M``; ``objective``
    reports ``F`` itself.
    """

    def __init__(self, scales, base_dim: int = 10, init=-2.0):
        self.scales = as_vector(scales, "scales")
        if base_dim < 2:
            raise ValueError("Rosenbrock needs at least two variables")
        self.dim = int(base_dim)
        self.num_workers = self.scales.size
        self._init = np.broadcast_to(np.asarray(init, dtype=np.float64), (self.dim,)).copy()
        self.minimizer_hint = np.ones(self.dim)

    @classmethod
    def sample(cls, num_workers=100, num_negative=80, base_dim=10, rng=None, negative_mass=0.01, init=-2.0):
        return cls(sample_scales(num_workers, num_negative, rng, negative_mass), base_dim, init)

    @property
    def num_negative(self) -> int:
        return int(np.sum(self.scales < 0))

    def local_value(self, worker, w):
        return float(self.scales[self._check_worker(worker)] * rosenbrock_value_grad(w)[0])

    def local_grad(self, worker, w):
        return self.scales[self._check_worker(worker)] * rosenbrock_value_grad(w)[1]

    def local_grads(self, workers, w):
        idx = np.asarray(list(workers), dtype=np.int64)
        return self.scales[idx, None] * rosenbrock_value_grad(w)[1][None, :]

    def global_value(self, w):
        return rosenbrock_value_grad(w)[0] / self.num_workers

    def global_grad(self, w):
        return rosenbrock_value_grad(w)[1] / self.num_workers

    def objective(self, w):
        return rosenbrock_value_grad(w)[0]

    def initial_point(self):
        return self._init.copy()


def dirichlet_partition(
    num_classes: int,
    num_workers: int,
    samples_per_worker: int,
    alpha: float,
    rng=None,
    feature_dim: int = 20,
    class_separation: float = 1.0,
):
    """Non-iid synthetic classification data.

    Each worker's class proportions are drawn from ``Dir(alpha * 1)``; labels
    are drawn from those proportions and features from per-class Gaussian
    clusters ``N(mu_c, I)`` with ``mu_c ~ N(0, class_separation^2 I)``.

    Returns ``(proportions, datasets, class_means)`` where ``datasets`` is a
    list of ``(features, labels)`` pairs.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if num_workers < 1 or samples_per_worker < 1 or feature_dim < 1:
        raise ValueError("num_workers, samples_per_worker and feature_dim must be positive")
    gen = resolve_rng(rng)
    means = gen.normal(0.0, class_separation, size=(num_classes, feature_dim))
    proportions = gen.dirichlet(np.full(num_classes, float(alpha)), size=num_workers)
    # tiny alpha can underflow every component to zero
    bad = ~np.isfinite(proportions).all(axis=1) | (proportions.sum(axis=1) == 0)
    for m in np.flatnonzero(bad):
        proportions[m] = np.eye(num_classes)[gen.integers(num_classes)]
    proportions /= proportions.sum(axis=1, keepdims=True)
    datasets = []
    for m in range(num_workers):
        labels = gen.choice(num_classes, size=samples_per_worker, p=proportions[m])
        feats = means[labels] + gen.standard_normal((samples_per_worker, feature_dim))
        datasets.append((feats, labels))
    return proportions, datasets, means


def _softmax_xent(weights: np.ndarray, feats: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and gradient for a linear softmax model with bias."""
    logits = feats @ weights[:, :-1].T + weights[:, -1]
    logits -= logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    n = labels.size
    rows = np.arange(n)
    loss = float(-np.mean(np.log(probs[rows, labels] + 1e-300)))
    probs[rows, labels] -= 1.0
    probs /= n
    grad = np.empty_like(weights)
    grad[:, :-1] = probs.T @ feats
    grad[:, -1] = probs.sum(axis=0)
    return loss, grad


class SyntheticClassification(HeterogeneousProblem):
    """Multinomial logistic regression on Dirichlet-partitioned Gaussian clusters.

    Parameters are the flattened ``(C, feature_dim + 1)`` weight matrix.
    """

    def __init__(self, datasets, num_classes: int, proportions=None):
        self.datasets = [(np.asarray(x, float), np.asarray(y, np.int64)) for x, y in datasets]
        self.num_classes = int(num_classes)
        self.num_workers = len(self.datasets)
        self.feature_dim = self.datasets[0][0].shape[1]
        self.shape = (self.num_classes, self.feature_dim + 1)
        self.dim = self.shape[0] * self.shape[1]
        self.proportions = proportions

    @classmethod
    def generate(
        cls,
        num_classes=10,
        num_workers=100,
        samples_per_worker=200,
        alpha=0.1,
        rng=None,
        feature_dim=20,
        class_separation=1.0,
    ):
        props, data, _ = dirichlet_partition(
            num_classes, num_workers, samples_per_worker, alpha, rng, feature_dim, class_separation
        )
        return cls(data, num_classes, props)

    @property
    def stochastic(self) -> bool:
        return True

    def dataset_size(self, worker: int) -> int:
        return self.datasets[self._check_worker(worker)][1].size

    def _eval(self, worker, w, rows=None):
        feats, labels = self.datasets[self._check_worker(worker)]
        if rows is not None:
            feats, labels = feats[rows], labels[rows]
        weights = as_vector(w).reshape(self.shape)
        return _softmax_xent(weights, feats, labels)

    def local_value(self, worker, w):
        return self._eval(worker, w)[0]

    def local_grad(self, worker, w):
        return self._eval(worker, w)[1].ravel()

    def stochastic_grad(self, worker, w, batch_size, rng):
        n = self.dataset_size(worker)
        if batch_size is None or batch_size >= n:
            if batch_size is not None and batch_size > n:
                raise ValueError(f"batch size {batch_size} exceeds local dataset size {n}")
            return self.local_grad(worker, w)
        if batch_size < 1:
            raise ValueError("batch size must be at least 1")
        rows = resolve_rng(rng).choice(n, size=batch_size, replace=False)
        return self._eval(worker, w, rows)[1].ravel()

    def _pooled(self):
        if not hasattr(self, "_pool"):
            sizes = {y.size for _, y in self.datasets}
            self._pool = None
            if len(sizes) == 1:
                self._pool = (
                    np.concatenate([x for x, _ in self.datasets]),
                    np.concatenate([y for _, y in self.datasets]),
                )
        return self._pool

    def _pooled_eval(self, w):
        # the training loops ask for the value and the gradient at the same point
        w = as_vector(w)
        key = w.tobytes()
        cached = getattr(self, "_last_eval", None)
        if cached is not None and cached[0] == key:
            return cached[1]
        out = _softmax_xent(w.reshape(self.shape), *self._pooled())
        self._last_eval = (key, out)
        return out

    def global_value(self, w):
        if self._pooled() is None:
            return super().global_value(w)
        return self._pooled_eval(w)[0]

    def global_grad(self, w):
        # equal local sizes make the pooled mean equal to the mean of local means
        if self._pooled() is None:
            return super().global_grad(w)
        return self._pooled_eval(w)[1].ravel().copy()


def local_stochastic_gradient(
    problem: HeterogeneousProblem, worker: int, w, batch_size: Optional[int], rng
) -> np.ndarray:
    """Minibatch gradient of worker ``worker``'s objective at ``w``."""
    return problem.stochastic_grad(worker, w, batch_size, rng)
