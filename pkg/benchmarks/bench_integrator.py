"""Wall-clock comparison of the numba and numpy integrator backends.

Usage: python benchmarks/bench_integrator.py [--duration 2.0] [--repeat 3]
"""
import argparse
import time

import numpy as np

from sidebandsim import _kernels
from sidebandsim.dynamics import SimConfig, simulate
from sidebandsim.presets import HIGH_PRESSURE, paper_defaults


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--duration", type=float, default=2.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    system = paper_defaults(pressure=HIGH_PRESSURE)
    sim = SimConfig(duration=args.duration, seed=1, thermal_start=True)
    steps = sim.n_samples * sim.decimation

    simulate(system, SimConfig(duration=1e-2, seed=0), backend="numba")  # compile

    results = {}
    for backend in ("numba", "numpy"):
        t, traj = best_of(lambda: simulate(system, sim, backend=backend), args.repeat)
        results[backend] = traj
        print(f"{backend:>6}: {t:8.3f} s  ({steps / t / 1e6:6.1f} Msteps/s)")

    diff = np.max(np.abs(results["numba"].positions - results["numpy"].positions))
    scale = np.max(np.abs(results["numba"].positions))
    print(f"max |numba - numpy| / max|y| = {diff / scale:.2e}")
    print(f"numba available: {_kernels.HAVE_NUMBA}")


if __name__ == "__main__":
    main()
