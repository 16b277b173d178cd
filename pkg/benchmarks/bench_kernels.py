"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from sparsign import _kernels_py

try:
    from sparsign import _kernels as _cy
except ImportError:
    _cy = None


def cases(rng):
    small = rng.normal(size=(10, 10))
    small_b = np.full(10, 0.01)
    small_u = rng.random(small.shape)
    grads = rng.normal(size=(100, 10_000))
    budget = np.full(10_000, 0.5)
    uniforms = rng.random(grads.shape)
    votes = rng.integers(-1, 2, size=(100, 100_000)).astype(np.int8)
    raw = rng.dirichlet(np.ones(3), size=12)
    p, q = np.ascontiguousarray(raw[:, 0]), np.ascontiguousarray(raw[:, 1])
    return {
        # the shape used per round in the Rosenbrock experiments
        "sparsign_rows 10x10": lambda k: k.sparsign_rows(small, small_b, small_u),
        "sparsign_rows 100x10000": lambda k: k.sparsign_rows(grads, budget, uniforms),
        "vote_sum 100x100000": lambda k: k.vote_sum(votes),
        "wrong_prob_enumerate M=12": lambda k: k.wrong_prob_enumerate(p, q),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _kernels_py)] + ([("cython", _cy)] if _cy is not None else [])
    if _cy is None:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<28}" + "".join(f"{name:>12}" for name, _ in backends) + ("     speedup" if _cy else ""))
    for label, fn in cases(rng).items():
        times = [min(timeit.repeat(lambda: fn(mod), number=100, repeat=args.repeat)) / 100 for _, mod in backends]
        row = f"{label:<28}" + "".join(f"{t * 1e6:>10.1f}us" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
