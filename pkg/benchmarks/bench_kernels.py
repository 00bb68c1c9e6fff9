"""Compare the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best wall time per kernel for each backend, the speed-up, and
the largest absolute difference between the two results.
"""
import argparse
import time

import numpy as np

from hybridens import _kernels_py

try:
    from hybridens import _kernels
except ImportError:
    _kernels = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _cases():
    rng = np.random.default_rng(0)
    x = np.sin(np.linspace(-1.5, 1.5, 64))
    state = 8.0 + rng.standard_normal((1, 8, 32))
    members = rng.standard_normal((48, 4096))
    truth = rng.standard_normal(4096)
    return {
        "legendre_table L=32, 64 nodes": lambda k: k.legendre_table(32, x),
        "l96_integrate 8x32, 500 outputs": lambda k: k.l96_integrate(state, 8.0, 0.05, 0.01, 500, 5, 1e3)[0],
        "fair_crps_points K=48, 4096 pts": lambda k: k.fair_crps_points(members, truth),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':36s} {'python [s]':>11s} {'cython [s]':>11s} {'speed-up':>9s} {'max |diff|':>11s}")
    for name, case in _cases().items():
        t_py, out_py = _best(lambda: case(_kernels_py), args.repeat)
        if _kernels is None:
            print(f"{name:36s} {t_py:11.4f} {'-':>11s} {'-':>9s} {'-':>11s}")
            continue
        t_cy, out_cy = _best(lambda: case(_kernels), args.repeat)
        diff = float(np.max(np.abs(np.asarray(out_py) - np.asarray(out_cy))))
        print(f"{name:36s} {t_py:11.4f} {t_cy:11.4f} {t_py / t_cy:9.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
