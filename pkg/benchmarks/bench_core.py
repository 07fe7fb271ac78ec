#!/usr/bin/env python3
"""Benchmark the compiled stepping kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_core.py [--steps N]
"""

import argparse
import time

import numpy as np

from gradphi import _core_py
from gradphi.lattice import TorusGrid
from gradphi.rng import philox_normal_block

try:
    from gradphi import _core_cy
except ImportError:
    _core_cy = None


def bench_langevin(mod, d, n, steps, dt=1e-3):
    grid = TorusGrid(d, n)
    plus, minus = grid._tables()
    phi = np.zeros(grid.nsites)
    p = np.zeros(d)
    p[0] = 2.0
    noise = np.sqrt(dt) * philox_normal_block(1, 0, steps,
                                              np.arange(grid.nsites))
    t0 = time.perf_counter()
    mod.langevin_block(phi, p, noise, dt, 1.0, 10.0 / dt, 1, 1.0, 3.0, 1.0,
                       True, plus, minus)
    elapsed = time.perf_counter() - t0
    return steps * grid.nsites / elapsed, elapsed


def bench_parabolic(mod, d, n, steps, dt=1e-3):
    grid = TorusGrid(d, n)
    plus, minus = grid._tables()
    rng = np.random.default_rng(0)
    u = rng.standard_normal(grid.nsites)
    a = np.ascontiguousarray(
        np.broadcast_to(np.eye(d), (grid.nsites, d, d)).copy())
    lam = np.zeros(d)
    t0 = time.perf_counter()
    mod.parabolic_block(u, a, lam, dt, 1.0, steps, None, plus, minus)
    elapsed = time.perf_counter() - t0
    return steps * grid.nsites / elapsed, elapsed


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=20000)
    args = ap.parse_args()

    cases = [("langevin d=1 n=3", bench_langevin, 1, 3, args.steps * 10),
             ("langevin d=2 n=16", bench_langevin, 2, 16, args.steps),
             ("langevin d=2 n=32", bench_langevin, 2, 32, args.steps // 4),
             ("parabolic d=2 n=16", bench_parabolic, 2, 16, args.steps)]
    mods = [("python", _core_py)]
    if _core_cy is not None:
        mods.append(("cython", _core_cy))

    print(f"{'case':22s} {'backend':8s} {'site-updates/s':>16s} {'time':>8s}")
    for name, fn, d, n, steps in cases:
        base = None
        for mod_name, mod in mods:
            rate, elapsed = fn(mod, d, n, steps)
            speedup = "" if base is None else f"  ({rate / base:.1f}x)"
            if base is None:
                base = rate
            print(f"{name:22s} {mod_name:8s} {rate:16.3g} {elapsed:7.2f}s"
                  f"{speedup}")


if __name__ == "__main__":
    main()
