"""Vector and message types shared by the rest of the package.

Dense vectors are plain 1-D ``float64`` numpy arrays validated by
:func:`as_vector`. Worker messages are sparse: only the nonzero coordinates
are stored, because communication accounting is defined over them.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

ArrayLike = Union[Sequence[float], np.ndarray]


def as_vector(values: ArrayLike, name: str = "vector") -> np.ndarray:
    """Return ``values`` as a finite, nonempty 1-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must have positive dimension")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def sign_of(x: float) -> int:
    """Sign with the convention ``sign(0) == 0``."""
    if not math.isfinite(x):
        raise ValueError(f"sign of non-finite value {x!r}")
    return (x > 0) - (x < 0)


@dataclass(frozen=True)
class TernaryMessage:
    """A vector in ``{-s, 0, +s}^dim`` stored by its nonzero coordinates.

    ``scale`` is ``None`` for pure sign/ternary messages (``s = 1``).
    """

    dim: int
    nonzero_indices: np.ndarray
    signs: np.ndarray
    scale: Optional[float] = None

    def __post_init__(self):
        idx = np.asarray(self.nonzero_indices, dtype=np.int64).reshape(-1)
        sgn = np.asarray(self.signs, dtype=np.int8).reshape(-1)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if idx.shape != sgn.shape:
            raise ValueError("signs and nonzero_indices differ in length")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim or np.any(np.diff(idx) <= 0):
                raise ValueError("nonzero_indices must be strictly increasing in [0, dim)")
            if not np.all(np.abs(sgn) == 1):
                raise ValueError("signs must be -1 or +1")
        if self.scale is not None and not (math.isfinite(self.scale) and self.scale >= 0):
            raise ValueError("scale must be a finite nonnegative number")
        object.__setattr__(self, "nonzero_indices", _frozen(idx))
        object.__setattr__(self, "signs", _frozen(sgn))

    @property
    def nnz(self) -> int:
        return int(self.nonzero_indices.size)

    @classmethod
    def from_dense(cls, values: ArrayLike, scale: Optional[float] = None) -> "TernaryMessage":
        """Build a message from a dense vector with entries in ``{-s, 0, +s}``."""
        arr = as_vector(values)
        s = 1.0 if scale is None else float(scale)
        idx = np.flatnonzero(arr)
        if idx.size and not np.all(np.abs(arr[idx]) == s):
            raise ValueError("nonzero entries must all have magnitude equal to the scale")
        return cls(arr.size, idx, np.sign(arr[idx]).astype(np.int8), scale)

    @classmethod
    def from_signs(cls, signs: np.ndarray, scale: Optional[float] = None) -> "TernaryMessage":
        """Build a message from a dense integer array in ``{-1, 0, 1}``."""
        signs = np.asarray(signs).reshape(-1)
        idx = np.flatnonzero(signs)
        return cls(signs.size, idx, signs[idx].astype(np.int8), scale)

    def sign_array(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.int8)
        out[self.nonzero_indices] = self.signs
        return out

    def __neg__(self) -> "TernaryMessage":
        return TernaryMessage(self.dim, self.nonzero_indices, -self.signs, self.scale)


@dataclass(frozen=True)
class QuantizedMessage:
    """Multi-level stochastic quantization output (QSGD with ``s > 1``).

    Coordinate ``i`` decodes to ``scale * level_i / levels``; ``level_values``
    are nonzero signed integers in ``[-levels, levels]``.
    """

    dim: int
    nonzero_indices: np.ndarray
    level_values: np.ndarray
    levels: int
    scale: float

    def __post_init__(self):
        idx = np.asarray(self.nonzero_indices, dtype=np.int64).reshape(-1)
        lv = np.asarray(self.level_values, dtype=np.int64).reshape(-1)
        if idx.shape != lv.shape:
            raise ValueError("level_values and nonzero_indices differ in length")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.dim or np.any(np.diff(idx) <= 0)):
            raise ValueError("nonzero_indices must be strictly increasing in [0, dim)")
        if np.any(lv == 0) or np.any(np.abs(lv) > self.levels):
            raise ValueError("level values must be nonzero and bounded by levels")
        object.__setattr__(self, "nonzero_indices", _frozen(idx))
        object.__setattr__(self, "level_values", _frozen(lv))

    @property
    def nnz(self) -> int:
        return int(self.nonzero_indices.size)


Message = Union[TernaryMessage, QuantizedMessage]


def densify(msg: Message) -> np.ndarray:
    """Expand a sparse message into a dense float64 vector."""
    out = np.zeros(msg.dim, dtype=np.float64)
    if isinstance(msg, QuantizedMessage):
        out[msg.nonzero_indices] = msg.scale * msg.level_values / msg.levels
        return out
    scale = 1.0 if msg.scale is None else msg.scale
    out[msg.nonzero_indices] = scale * msg.signs
    return out


@dataclass(frozen=True)
class CompressionBudget:
    """Nonnegative sparsity budget, scalar or per coordinate."""

    per_coordinate: Union[float, np.ndarray]

    def __post_init__(self):
        b = np.asarray(self.per_coordinate, dtype=np.float64)
        if b.ndim > 1:
            raise ValueError("budget must be a scalar or a 1-D sequence")
        if not np.all(np.isfinite(b)) or np.any(b < 0):
            raise ValueError("budget entries must be finite and nonnegative")
        object.__setattr__(self, "per_coordinate", float(b) if b.ndim == 0 else _frozen(b))

    def resolve(self, dim: int) -> np.ndarray:
        """Broadcast to a length-``dim`` array, checking per-coordinate length."""
        if isinstance(self.per_coordinate, float):
            return np.full(dim, self.per_coordinate)
        if self.per_coordinate.size != dim:
            raise ValueError(
                f"budget has {self.per_coordinate.size} entries but gradient has dimension {dim}"
            )
        return self.per_coordinate


def purpose_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(round, worker, purpose)``.

    The generator is a pure function of ``master_seed`` and ``stream_id``, so
    workers can be evaluated in any order or in parallel.
    """

    master_seed: int
    stream_id: tuple = field(default=())

    def child(self, *key) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id + tuple(key))

    def generator(self) -> np.random.Generator:
        # signed ids (e.g. -1 for server-side streams) map to unsigned 64-bit keys
        spawn_key = tuple(
            purpose_code(k) if isinstance(k, str) else int(k) & (2**64 - 1) for k in self.stream_id
        )
        ss = np.random.SeedSequence(entropy=self.master_seed & (2**64 - 1), spawn_key=spawn_key)
        return np.random.Generator(np.random.PCG64(ss))


def resolve_rng(rng: Union[RngStream, np.random.Generator, int, None]) -> np.random.Generator:
    """Accept a stream, a generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)
