"""Communication-cost accounting.

Costs are expected bit counts, computed analytically; no bitstream is
produced. Indices of nonzero entries in ternary messages are charged at the
average Golomb-Rice code length for geometric gaps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .compressors import CompressorConfig
from .core import QuantizedMessage, TernaryMessage

FLOAT_BITS = 32
# each TernGrad worker shares its max-norm with the server every round
MAGNITUDE_SHARING_BITS = 32

_GOLDEN_CONJUGATE = (math.sqrt(5.0) - 1.0) / 2.0


def golomb_parameter(p: float) -> int:
    """Rice parameter ``b*`` for gaps between nonzeros at density ``p``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"sparsity ratio must lie in (0, 1), got {p!r}")
    b = 1 + math.floor(math.log2(math.log(_GOLDEN_CONJUGATE) / math.log(1.0 - p)))
    return max(b, 0)


def golomb_bits_per_index(p: float) -> float:
    """Average Golomb code length per nonzero index at density ``p``."""
    b = golomb_parameter(p)
    return b + 1.0 / (1.0 - (1.0 - p) ** (2**b))


def index_bits(nnz: int, dim: int) -> float:
    """Bits per index for a message with ``nnz`` nonzeros out of ``dim``.

    A fully dense message takes the ``p -> 1`` limit of one bit per index.
    """
    if nnz == 0:
        return 0.0
    if nnz == dim:
        return 1.0
    return golomb_bits_per_index(nnz / dim)


@dataclass(frozen=True)
class BitCost:
    uplink_bits: float = 0.0
    downlink_bits: float = 0.0

    def __post_init__(self):
        if self.uplink_bits < 0 or self.downlink_bits < 0:
            raise ValueError("bit counts must be nonnegative")

    def __add__(self, other: "BitCost") -> "BitCost":
        return BitCost(self.uplink_bits + other.uplink_bits, self.downlink_bits + other.downlink_bits)

    @property
    def total(self) -> float:
        return self.uplink_bits + self.downlink_bits


def ternary_cost(nnz: int, dim: int) -> float:
    """``nnz * (index bits + 1 sign bit)``."""
    return nnz * (index_bits(nnz, dim) + 1.0) if nnz else 0.0


def message_cost(msg: Union[TernaryMessage, QuantizedMessage, np.ndarray], method: CompressorConfig) -> float:
    """Uplink bits for one worker message sent with ``method``."""
    kind = method.kind
    if kind == "identity":
        return float(FLOAT_BITS * np.asarray(msg).size)
    if kind in ("sign", "noisy_sign"):
        return float(msg.dim)
    if kind == "scaled_sign":
        return float(msg.dim + FLOAT_BITS)
    if isinstance(msg, QuantizedMessage):
        level_bits = math.ceil(math.log2(2 * msg.levels))
        idx = index_bits(msg.nnz, msg.dim)
        return msg.nnz * (idx + level_bits) + FLOAT_BITS
    cost = ternary_cost(msg.nnz, msg.dim)
    if method.carries_scale:
        cost += FLOAT_BITS
    if kind == "terngrad":
        cost += MAGNITUDE_SHARING_BITS
    return cost


def downlink_cost(rule: str, dim: int) -> float:
    """Server broadcast bits for one round."""
    if rule == "majority_vote_sign":
        return float(dim)
    if rule == "scaled_sign_with_ef":
        return float(dim + FLOAT_BITS)
    if rule == "mean":
        return float(FLOAT_BITS * dim)
    raise ValueError(f"unknown aggregation rule {rule!r}")
