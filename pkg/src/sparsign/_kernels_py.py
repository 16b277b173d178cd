"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def sparsign_rows(grads, budget, uniforms):
    grads = np.asarray(grads, dtype=np.float64)
    probs = np.minimum(np.abs(grads) * np.asarray(budget, dtype=np.float64), 1.0)
    keep = np.asarray(uniforms) < probs
    return (np.sign(grads) * keep).astype(np.int8)


def vote_sum(votes):
    return np.asarray(votes, dtype=np.int64).sum(axis=0)


def wrong_prob_enumerate(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.size > 24:
        raise ValueError("enumeration limited to 24 workers")
    probs = np.ones(1)
    sums = np.zeros(1, dtype=np.int64)
    step = np.array([1, -1, 0], dtype=np.int64)
    for pm, qm in zip(p, q):
        probs = np.multiply.outer(probs, [qm, pm, 1.0 - pm - qm]).ravel()
        sums = np.add.outer(sums, step).ravel()
    return float(probs[sums <= 0].sum())
