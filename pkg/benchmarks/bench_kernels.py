"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--threads 4]
"""
import argparse
import time

import numpy as np

from momentstein import _fallback, _kernels

try:
    from momentstein import _core
except ImportError:  # extension not built
    _core = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(threads):
    rng = np.random.default_rng(0)
    X2, Y2 = rng.normal(size=(20_000, 2)), rng.normal(size=(64, 2))
    c = rng.normal(size=64)
    A, B = rng.normal(size=(2000, 2)), rng.normal(size=(2000, 2))
    h = rng.normal(size=2000)
    xa, xb = np.sort(rng.normal(size=200_000)), np.sort(rng.normal(size=150_000))
    wa, wb = np.full(len(xa), 1 / len(xa)), np.full(len(xb), 1 / len(xb))
    return {
        "max_affine 20000x64": lambda impl: _kernels.max_affine(X2, Y2, c, threads, impl=impl),
        "logsumexp_affine 20000x64": lambda impl: _kernels.logsumexp_affine(X2, Y2, c, 5.0, threads, impl=impl),
        "sinkhorn_softmin 2000x2000": lambda impl: _kernels.sinkhorn_softmin(A, B, h, 0.05, 2.0, threads, impl=impl),
        "mean_distance 2000x2000": lambda impl: _kernels.mean_distance(A, B, threads, impl=impl),
        "quantile_wpp 200k/150k": lambda impl: _kernels.quantile_wpp(xa, wa, xb, wb, 2.0, impl=impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'kernel':<30}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}")
    for name, fn in cases(args.threads).items():
        slow = _best(lambda: fn(_fallback), args.repeat)
        fast = _best(lambda: fn(_core), args.repeat)
        print(f"{name:<30}{1e3 * slow:>12.2f}{1e3 * fast:>13.2f}{slow / fast:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
