"""Worker-side gradient compressors.

Every stochastic compressor has a ``*_dense`` sampler that can draw many
independent outputs at once (``size=n`` gives an ``(n, d)`` array); the
message-returning functions are thin wrappers around one draw.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Union

import numpy as np

from . import kernels
from .core import (
    CompressionBudget,
    QuantizedMessage,
    RngStream,
    TernaryMessage,
    as_vector,
    resolve_rng,
)

KINDS = (
    "sparsign",
    "sign",
    "scaled_sign",
    "noisy_sign",
    "qsgd",
    "qsgd_1bit_l2",
    "qsgd_1bit_linf",
    "terngrad",
    "identity",
)

# parameter each kind requires; all other parameters must be absent
_REQUIRED = {
    "sparsign": "budget",
    "noisy_sign": "noise_stddev",
    "qsgd": "levels",
    "terngrad": "shared_max",
}

Rng = Union[RngStream, np.random.Generator, int, None]


@dataclass(frozen=True)
class CompressorConfig:
    kind: str
    budget: Optional[float] = None
    noise_stddev: Optional[float] = None
    levels: Optional[int] = None
    shared_max: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown compressor kind {self.kind!r}; expected one of {KINDS}")
        required = _REQUIRED.get(self.kind)
        for name in ("budget", "noise_stddev", "levels", "shared_max"):
            value = getattr(self, name)
            # terngrad's shared max is filled in by the simulation engine each round
            if name == required and value is None and name != "shared_max":
                raise ValueError(f"compressor {self.kind!r} requires {name}")
            if name != required and value is not None:
                raise ValueError(f"compressor {self.kind!r} does not accept {name}")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be nonnegative")
        if self.noise_stddev is not None and self.noise_stddev <= 0:
            raise ValueError("noise_stddev must be positive")
        if self.levels is not None and (int(self.levels) != self.levels or self.levels < 1):
            raise ValueError("levels must be a positive integer")
        if self.shared_max is not None and self.shared_max <= 0:
            raise ValueError("shared_max must be positive")

    @property
    def stochastic(self) -> bool:
        return self.kind not in ("sign", "scaled_sign", "identity")

    @property
    def carries_scale(self) -> bool:
        return self.kind in ("scaled_sign", "qsgd", "qsgd_1bit_l2", "qsgd_1bit_linf", "terngrad")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _budget_array(budget, dim: int) -> np.ndarray:
    if not isinstance(budget, CompressionBudget):
        budget = CompressionBudget(budget)
    return budget.resolve(dim)


def sparsign_probabilities(g, budget) -> np.ndarray:
    """Keep probabilities ``clip(|g_i| B_i, 0, 1)``."""
    g = as_vector(g, "gradient")
    return np.minimum(np.abs(g) * _budget_array(budget, g.size), 1.0)


def sparsign_dense(g, budget, rng: Rng, size: Optional[int] = None) -> np.ndarray:
    """Draw sparsign outputs as int8 arrays in ``{-1, 0, 1}``."""
    g = as_vector(g, "gradient")
    b = _budget_array(budget, g.size)
    gen = resolve_rng(rng)
    n = 1 if size is None else int(size)
    u = gen.random((n, g.size))
    rows = np.broadcast_to(g, (n, g.size))
    out = kernels.sparsign_rows(np.ascontiguousarray(rows), np.ascontiguousarray(b), u)
    return out[0] if size is None else out


def sparsign(g, budget, rng: Rng) -> TernaryMessage:
    """Magnitude-driven ternary compressor.

    Coordinate ``i`` becomes ``sign(g_i)`` with probability
    ``min(|g_i| * B_i, 1)`` and ``0`` otherwise. Probabilities above one are
    clipped, which amounts to clipping the gradient at ``1 / B_i``.
    """
    return TernaryMessage.from_signs(sparsign_dense(g, budget, rng))


def sparsign_many(grads: np.ndarray, budget, rngs) -> np.ndarray:
    """Compress a stack of worker gradients, one random stream per row."""
    grads = np.ascontiguousarray(grads, dtype=np.float64)
    b = np.ascontiguousarray(_budget_array(budget, grads.shape[1]))
    u = np.empty_like(grads)
    for row, rng in enumerate(rngs):
        u[row] = resolve_rng(rng).random(grads.shape[1])
    return kernels.sparsign_rows(grads, b, u)


def deterministic_sign(g) -> TernaryMessage:
    return TernaryMessage.from_signs(np.sign(as_vector(g, "gradient")).astype(np.int8))


def scaled_sign(g) -> TernaryMessage:
    """``(||g||_1 / d) * sign(g)``; the zero vector maps to an empty message."""
    g = as_vector(g, "gradient")
    scale = float(np.abs(g).sum() / g.size)
    return TernaryMessage.from_signs(np.sign(g).astype(np.int8), scale=scale)


def scaled_sign_dense(x) -> np.ndarray:
    x = as_vector(x)
    return np.abs(x).sum() / x.size * np.sign(x)


def noisy_sign_dense(g, stddev: float, rng: Rng, size: Optional[int] = None) -> np.ndarray:
    if stddev <= 0:
        raise ValueError("stddev must be positive")
    g = as_vector(g, "gradient")
    gen = resolve_rng(rng)
    shape = g.shape if size is None else (int(size), g.size)
    return np.sign(g + gen.normal(0.0, stddev, size=shape)).astype(np.int8)


def noisy_sign(g, stddev: float, rng: Rng) -> TernaryMessage:
    """Sign of the gradient after adding independent Gaussian noise."""
    return TernaryMessage.from_signs(noisy_sign_dense(g, stddev, rng))


def _norm(g: np.ndarray, norm: str) -> float:
    if norm in ("l2", "L2"):
        return float(np.linalg.norm(g))
    if norm in ("linf", "Linf", "inf"):
        return float(np.max(np.abs(g)))
    raise ValueError(f"unknown norm {norm!r}")


def qsgd_levels(g, s: int, norm: str, rng: Rng, size: Optional[int] = None):
    """Signed integer levels in ``[-s, s]`` and the norm used as scale.

    ``|g_i| s / ||g||`` is rounded stochastically to one of its two neighbouring
    integers so that the expected level equals the unrounded value.
    """
    g = as_vector(g, "gradient")
    if int(s) != s or s < 1:
        raise ValueError("s must be a positive integer")
    scale = _norm(g, norm)
    if scale == 0.0:
        raise ValueError("QSGD is undefined for a zero-norm gradient")
    ratio = np.minimum(np.abs(g) * s / scale, float(s))
    lower = np.floor(ratio)
    frac = ratio - lower
    gen = resolve_rng(rng)
    shape = g.shape if size is None else (int(size), g.size)
    level = lower + (gen.random(shape) < frac)
    return (np.sign(g) * level).astype(np.int64), scale


def qsgd_dense(g, s: int, norm: str, rng: Rng, size: Optional[int] = None) -> np.ndarray:
    levels, scale = qsgd_levels(g, s, norm, rng, size)
    return scale * levels / s


def qsgd(g, s: int, norm: str, rng: Rng):
    """QSGD quantizer. ``s = 1`` returns a scaled :class:`TernaryMessage`."""
    levels, scale = qsgd_levels(g, s, norm, rng)
    idx = np.flatnonzero(levels)
    if s == 1:
        return TernaryMessage(levels.size, idx, levels[idx].astype(np.int8), scale)
    return QuantizedMessage(levels.size, idx, levels[idx], int(s), scale)


def terngrad_dense(g, shared_max: float, rng: Rng, size: Optional[int] = None) -> np.ndarray:
    g = as_vector(g, "gradient")
    gmax = float(np.max(np.abs(g)))
    if not shared_max > 0:
        raise ValueError("shared_max must be positive")
    if shared_max < gmax:
        raise ValueError(f"shared_max {shared_max} is below ||g||_inf = {gmax}")
    gen = resolve_rng(rng)
    shape = g.shape if size is None else (int(size), g.size)
    keep = gen.random(shape) < np.abs(g) / shared_max
    return shared_max * np.sign(g) * keep


def terngrad(g, shared_max: float, rng: Rng) -> TernaryMessage:
    """TernGrad: ``s_t sign(g_i)`` with probability ``|g_i| / s_t``."""
    dense = terngrad_dense(g, shared_max, rng)
    return TernaryMessage.from_signs(np.sign(dense).astype(np.int8), scale=float(shared_max))


def compress(config: CompressorConfig, g, rng: Rng, shared_max: Optional[float] = None):
    """Apply the compressor described by ``config``.

    Returns a message, or the dense gradient itself for ``identity``.
    """
    kind = config.kind
    if kind == "sparsign":
        return sparsign(g, config.budget, rng)
    if kind == "sign":
        return deterministic_sign(g)
    if kind == "scaled_sign":
        return scaled_sign(g)
    if kind == "noisy_sign":
        return noisy_sign(g, config.noise_stddev, rng)
    if kind in ("qsgd", "qsgd_1bit_l2", "qsgd_1bit_linf", "terngrad"):
        g = as_vector(g, "gradient")
        if not np.any(g):
            return TernaryMessage(g.size, [], [], 0.0)
    if kind == "qsgd":
        return qsgd(g, config.levels, "l2", rng)
    if kind == "qsgd_1bit_l2":
        return qsgd(g, 1, "l2", rng)
    if kind == "qsgd_1bit_linf":
        return qsgd(g, 1, "linf", rng)
    if kind == "terngrad":
        smax = shared_max if shared_max is not None else config.shared_max
        if smax is None:
            raise ValueError("terngrad needs the shared max-norm for this round")
        return terngrad(g, smax, rng)
    return as_vector(g, "gradient").copy()
