"""Time the compiled kernels against the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from spatial_fsod import _pykernels

try:
    from spatial_fsod import _ckernels
except ImportError:
    _ckernels = None


def _boxes(rng, n):
    xy = rng.uniform(0, 100, size=(n, 2))
    return np.hstack([xy, xy + rng.uniform(5, 40, size=(n, 2))])


def cases(rng):
    adj = np.maximum(rng.standard_normal((40, 40)), 0.0)
    g = rng.standard_normal((40, 40))
    out, _ = _pykernels.row_normalize(adj)
    a, b = _boxes(rng, 60), _boxes(rng, 8)
    scores = rng.permutation(60) / 60.0
    return {
        "row_normalize 40x40": lambda k: k.row_normalize(adj),
        "row_normalize_backward 40x40": lambda k: k.row_normalize_backward(g, adj, out),
        "iou_matrix 60x8": lambda k: k.iou_matrix(a, b),
        "nms 60 boxes": lambda k: k.nms(a, scores, 0.5),
        "greedy_match 60 vs 8": lambda k: k.greedy_match(a, b, 0.5),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    header = f"{'kernel':32s}" + "".join(f"{name + ' us':>12s}" for name, _ in backends)
    if _ckernels:
        header += f"{'speedup':>10s}"
    print(header)
    for name, fn in cases(rng).items():
        times = [min(timeit.repeat(lambda: fn(mod), number=args.repeat, repeat=3)) / args.repeat * 1e6
                 for _, mod in backends]
        line = f"{name:32s}" + "".join(f"{t:12.2f}" for t in times)
        if _ckernels:
            line += f"{times[0] / times[1]:9.1f}x"
        print(line)
    if not _ckernels:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
