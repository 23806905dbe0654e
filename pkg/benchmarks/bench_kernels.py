"""Wall-clock comparison of the compiled and numpy kernel backends.

Times the three hot kernels on data shaped like one simulation
replicate (p = 3, B = 1000 resamples) at two group sizes, and checks
that both backends return the same numbers while doing so.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--sizes 24,48]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from equivmd._kernels import COMPILED_AVAILABLE, Backend
from equivmd.bootstrap import ABC_STEP

B = 1000
P = 3


def _inputs(n, rng):
    xt = rng.standard_normal((n, P))
    xr = rng.standard_normal((n, P)) + 0.3
    diffs = xt - xr
    idx_t = rng.integers(0, n, size=(B, n))
    idx_r = rng.integers(0, n, size=(B, n))
    d = np.full(P, 0.5)
    return xt, xr, diffs, idx_t, idx_r, d


def _cases(n, rng):
    xt, xr, diffs, idx_t, idx_r, d = _inputs(n, rng)
    target = float(diffs.mean(axis=0) @ np.linalg.solve(np.cov(diffs.T, bias=True) / 2, diffs.mean(axis=0)))
    return {
        "boot_pooled": lambda be: be.boot_pooled(xt, xr, idx_t, idx_r, d),
        "abc_bounds": lambda be: be.abc_bounds(diffs, idx_t, d, ABC_STEP, [0.95]),
        "calibration": lambda be: be.abc_calibration_levels(diffs, idx_t, d, ABC_STEP, target, 0.001, 0.999, 40),
    }


def _best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def _max_rel_diff(a, b):
    a, b = np.atleast_1d(np.asarray(a[0] if isinstance(a, tuple) else a, dtype=float)), \
        np.atleast_1d(np.asarray(b[0] if isinstance(b, tuple) else b, dtype=float))
    both = np.isfinite(a) & np.isfinite(b)
    if not both.any():
        return 0.0
    scale = np.maximum(np.abs(a[both]), 1.0)
    return float(np.max(np.abs(a[both] - b[both]) / scale))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--sizes", default="24,48")
    args = parser.parse_args(argv)
    if not COMPILED_AVAILABLE:
        raise SystemExit("the compiled extension is not built; run `pip install -e . --no-build-isolation`")
    backends = {name: Backend(name) for name in ("python", "compiled")}
    print(f"{'kernel':<12} {'n':>4} {'python [ms]':>12} {'compiled [ms]':>14} {'speedup':>8} {'max rel diff':>13}")
    for n in (int(s) for s in args.sizes.split(",")):
        cases = _cases(n, np.random.default_rng(n))
        for name, fn in cases.items():
            t_py, out_py = _best_time(lambda: fn(backends["python"]), args.repeat)
            t_c, out_c = _best_time(lambda: fn(backends["compiled"]), args.repeat)
            diff = _max_rel_diff(out_py, out_c)
            print(f"{name:<12} {n:>4} {1e3 * t_py:>12.2f} {1e3 * t_c:>14.2f} {t_py / t_c:>8.2f} {diff:>13.2e}")


if __name__ == "__main__":
    main()
