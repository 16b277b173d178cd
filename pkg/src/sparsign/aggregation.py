"""Server-side aggregation rules and the server error-feedback state."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .compressors import scaled_sign_dense
from .core import Message, TernaryMessage, densify

RULES = ("majority_vote_sign", "scaled_sign_with_ef", "mean")

Incoming = Union[Message, np.ndarray]


def _stack(messages: Sequence[Incoming]) -> np.ndarray:
    if len(messages) == 0:
        raise ValueError("cannot aggregate an empty set of workers")
    dims = {m.size if isinstance(m, np.ndarray) else m.dim for m in messages}
    if len(dims) != 1:
        raise ValueError(f"messages disagree on dimension: {sorted(dims)}")
    return np.stack([m if isinstance(m, np.ndarray) else densify(m) for m in messages])


def message_sum(messages: Sequence[Incoming]) -> np.ndarray:
    """Coordinate-wise sum of the densified messages."""
    if messages and all(isinstance(m, TernaryMessage) and m.scale is None for m in messages):
        dims = {m.dim for m in messages}
        if len(dims) != 1:
            raise ValueError(f"messages disagree on dimension: {sorted(dims)}")
        votes = np.stack([m.sign_array() for m in messages])
        return kernels.vote_sum(votes).astype(np.float64)
    return _stack(messages).sum(axis=0)


def majority_vote(messages: Sequence[Incoming]) -> TernaryMessage:
    """Sign of the summed worker messages; a tied coordinate gives 0."""
    return TernaryMessage.from_signs(np.sign(message_sum(list(messages))).astype(np.int8))


def mean_aggregate(messages: Sequence[Incoming]) -> np.ndarray:
    messages = list(messages)
    return message_sum(messages) / len(messages)


@dataclass(frozen=True)
class ServerState:
    residual: np.ndarray
    rule: str = "scaled_sign_with_ef"

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown aggregation rule {self.rule!r}")
        r = np.array(self.residual, dtype=np.float64)
        r.setflags(write=False)
        object.__setattr__(self, "residual", r)

    @classmethod
    def initial(cls, dim: int, rule: str = "scaled_sign_with_ef") -> "ServerState":
        return cls(np.zeros(dim), rule)

    @property
    def dim(self) -> int:
        return self.residual.size


def ef_aggregate(
    state: ServerState, messages: Iterable[Incoming], sample_size: int | None = None
) -> Tuple[np.ndarray, ServerState]:
    """One error-feedback server step with the scaled-sign compressor.

    ``avg`` is the mean of the sampled workers' messages (dividing by the
    sampled count). Returns the broadcast ``C(avg + e)`` and the state holding
    the new residual ``avg + e - C(avg + e)``.
    """
    if state.rule != "scaled_sign_with_ef":
        raise ValueError(f"ef_aggregate needs rule 'scaled_sign_with_ef', got {state.rule!r}")
    stacked = _stack(list(messages))
    if stacked.shape[1] != state.dim:
        raise ValueError("message dimension does not match server residual")
    count = stacked.shape[0] if sample_size is None else int(sample_size)
    if count != stacked.shape[0]:
        raise ValueError(f"got {stacked.shape[0]} messages for a sample of {count}")
    corrected = stacked.sum(axis=0) / count + state.residual
    broadcast = scaled_sign_dense(corrected)
    return broadcast, ServerState(corrected - broadcast, state.rule)


def aggregate(state: ServerState, messages: Sequence[Incoming]) -> Tuple[np.ndarray, ServerState]:
    """Dispatch on ``state.rule``; returns the dense broadcast and next state."""
    messages = list(messages)
    if state.rule == "scaled_sign_with_ef":
        return ef_aggregate(state, messages)
    if state.rule == "majority_vote_sign":
        return densify(majority_vote(messages)), state
    return mean_aggregate(messages), state
