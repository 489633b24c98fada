"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--sizes 200 1000 3000]

Each row reports the best-of-``repeat`` wall time per call for both backends
and the speedup. Outputs are checked for bit equality before timing.
"""

import argparse
import sys
import timeit

import numpy as np

from laar import _fallback

try:
    from laar import _kernels
except ImportError:
    _kernels = None


def random_boxes(rng, n, extent=600.0):
    xy = rng.uniform(0, extent, (n, 2))
    wh = rng.uniform(4, 120, (n, 2))
    return np.ascontiguousarray(np.hstack([xy, xy + wh]))


def cases(n, rng):
    boxes = random_boxes(rng, n)
    gts = random_boxes(rng, max(n // 20, 2))
    rank = rng.random(n)
    conf = rng.random(n)
    # detections concentrated near GTs so matching does real work
    dets = gts[rng.integers(0, len(gts), n)] + rng.normal(0, 3, (n, 4))
    dets[:, 2:] = np.maximum(dets[:, 2:], dets[:, :2])
    order = np.argsort(-conf, kind="stable")
    ious = _fallback.iou_matrix(dets[order], gts)
    thr = np.round(np.arange(0.5, 0.951, 0.05), 2)
    g_ign = np.zeros(len(gts), dtype=bool)
    d_ign = np.zeros(n, dtype=bool)
    return {
        "iou_matrix": (boxes, gts),
        "greedy_nms": (boxes, rank, conf, 0.5, True),
        "match_greedy": (ious, thr, g_ign, d_ign),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def best_time(fn, args, repeat):
    n = 1
    while timeit.timeit(lambda: fn(*args), number=n) < 0.05 and n < 10_000:
        n *= 4
    return min(timeit.repeat(lambda: fn(*args), number=n, repeat=repeat)) / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[200, 1000, 3000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<14s}{'n':>6s}{'python (ms)':>14s}{'cython (ms)':>14s}{'speedup':>10s}")
    for n in args.sizes:
        for name, call_args in cases(n, rng).items():
            py, cy = getattr(_fallback, name), getattr(_kernels, name)
            if not same(py(*call_args), cy(*call_args)):
                print(f"{name}: backends disagree at n={n}", file=sys.stderr)
                return 2
            t_py = best_time(py, call_args, args.repeat)
            t_cy = best_time(cy, call_args, args.repeat)
            print(f"{name:<14s}{n:>6d}{t_py * 1e3:>14.3f}{t_cy * 1e3:>14.3f}{t_py / t_cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
