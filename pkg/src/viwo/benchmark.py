"""Benchmark of the IMU propagation kernel: compiled core vs pure Python."""

from __future__ import annotations

import time

import numpy as np

from ._kernels import _fallback

try:
    from ._kernels import _core
except ImportError:
    _core = None


def _time_backend(impl, n_steps: int, n_clones: int) -> float:
    rng = np.random.default_rng(0)
    dim = 15 + 6 * n_clones
    A = rng.normal(size=(dim, dim))
    cov = np.ascontiguousarray(A @ A.T * 1e-6)
    rot = np.eye(3)
    vel = np.array([5.0, 0.0, 0.0])
    pos = np.array([25.0, 0.0, 0.4])
    bg = np.full(3, 1e-3)
    ba = np.full(3, 1e-3)
    omega = np.array([0.0, 0.0, 0.2])
    accel = np.array([1.0, 0.0, 9.81])
    gravity = np.array([0.0, 0.0, -9.81])
    qc = np.array([1e-4, 1e-8, 1e-4, 1e-8])

    start = time.perf_counter()
    for _ in range(n_steps):
        rot, vel, pos = impl.imu_step(rot, vel, pos, bg, ba, cov, omega,
                                      accel, gravity, qc, 0.01, 2)
    return time.perf_counter() - start


def run_benchmark(n_steps: int = 20000, n_clones: int = 11) -> dict:
    """Time both kernel backends; prints a small table and returns timings."""
    results = {}
    results["python"] = _time_backend(_fallback, n_steps, n_clones)
    if _core is not None:
        results["compiled"] = _time_backend(_core, n_steps, n_clones)

    print(f"IMU propagation kernel, {n_steps} steps, "
          f"{15 + 6 * n_clones}-dim covariance:")
    for name, secs in results.items():
        rate = n_steps / secs
        print(f"  {name:9s} {1e6 * secs / n_steps:8.1f} us/step "
              f"({rate:,.0f} steps/s)")
    if "compiled" in results:
        print(f"  speedup   {results['python'] / results['compiled']:8.2f}x")
    else:
        print("  compiled backend not available")
    return results
