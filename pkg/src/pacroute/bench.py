"""Benchmark the replication kernel: numba against the numpy fallback.

Run as ``python -m pacroute.bench``. Builds a synthetic world-shaped input,
warms up the JIT, checks the two rails agree, then reports per-call times.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ._kernels import HAS_NUMBA, _tau_indices_numpy, tau_indices
from .calibrate import max_rejectable_count


def _synthetic_inputs(replications, n, cells, grid_size, seed):
    rng = np.random.default_rng(seed)
    masses = rng.random(cells)
    masses /= masses.sum()
    cdf = np.cumsum(masses)
    u = rng.random((replications, n))
    # roughly half the cells are "bad"; their first counting index is spread
    # over the grid, the rest never count
    first_k = np.where(
        rng.random(cells) < 0.5, rng.integers(0, grid_size, cells), grid_size
    ).astype(np.int64)
    b_star = max_rejectable_count(n, 0.05, 0.05)
    return u, cdf, first_k, b_star


def _time(fn, *args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replications", type=int, default=200_000)
    parser.add_argument("--n", type=int, default=100)
    parser.add_argument("--cells", type=int, default=8)
    parser.add_argument("--grid", type=int, default=9)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    u, cdf, first_k, b_star = _synthetic_inputs(
        args.replications, args.n, args.cells, args.grid, args.seed
    )
    print(
        f"replications={args.replications} n={args.n} cells={args.cells} "
        f"grid={args.grid} b_star={b_star}"
    )

    ref = _tau_indices_numpy(u, cdf, first_k, b_star, args.grid)
    t_numpy = _time(
        _tau_indices_numpy, u, cdf, first_k, b_star, args.grid, repeats=args.repeats
    )
    print(f"numpy : {t_numpy * 1e3:9.2f} ms")

    if not HAS_NUMBA:
        print("numba : not installed; skipping")
        return 0

    jit = tau_indices(u, cdf, first_k, b_star, args.grid, backend="numba")
    if not np.array_equal(ref, jit):
        raise AssertionError("numba and numpy kernels disagree")
    t_numba = _time(
        lambda: tau_indices(u, cdf, first_k, b_star, args.grid, backend="numba"),
        repeats=args.repeats,
    )
    print(f"numba : {t_numba * 1e3:9.2f} ms   ({t_numpy / t_numba:.1f}x vs numpy)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
