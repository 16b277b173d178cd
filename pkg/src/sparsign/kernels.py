"""Kernel backend selection.

The compiled extension is used when it has been built; otherwise the numpy
fallback is used. Set ``SPARSIGN_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"

if os.environ.get("SPARSIGN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py


# the compiled kernels take C-contiguous typed buffers; coerce here so callers
# can pass slices and lists to either backend


def sparsign_rows(grads, budget, uniforms):
    return _impl.sparsign_rows(
        np.ascontiguousarray(grads, dtype=np.float64),
        np.ascontiguousarray(budget, dtype=np.float64),
        np.ascontiguousarray(uniforms, dtype=np.float64),
    )


def vote_sum(votes):
    return _impl.vote_sum(np.ascontiguousarray(votes, dtype=np.int8))


def wrong_prob_enumerate(p, q):
    return _impl.wrong_prob_enumerate(
        np.ascontiguousarray(p, dtype=np.float64), np.ascontiguousarray(q, dtype=np.float64)
    )
