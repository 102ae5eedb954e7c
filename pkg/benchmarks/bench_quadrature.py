"""Benchmark the hot quadrature loops: numba-jitted vs pure-numpy fallback.

Runs the Gaussian-model projector application (the dominant cost of the
operator suite) on a criterion-sized workload and reports timings for both
code paths plus the max deviation between them.

    python benchmarks/bench_quadrature.py [--spacing 0.02] [--repeat 3]

The same fallback can be forced globally with PHASELAB_NO_NUMBA=1.
"""

import argparse
import time

import numpy as np

from phaselab import _accel, gauss_calc, operator_num as on


def workload(spacing: float):
    h = 0.05
    K = on.quad_kernel_from_gaussian(gauss_calc.model_kernel("bargmann", 1, h))
    x0 = np.array([0.2, -0.1])
    xi0 = np.array([0.1, 0.2])
    f = on.coherent_packet(x0, xi0, h, width=2.0, box_half=0.8)
    return K, f


def run(force_numpy: bool, K, f, spacing: float, repeat: int) -> tuple:
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = on.apply_kernel_quadrature(K, f, spacing=spacing, window=0.0,
                                         force_numpy=force_numpy)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--spacing", type=float, default=0.02)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    K, f = workload(args.spacing)
    npts = f.default_grid(args.spacing).values.size
    print(f"grid: {npts} points, numba available: {_accel.USE_NUMBA}")

    t_np, out_np = run(True, K, f, args.spacing, args.repeat)
    print(f"numpy fallback : {t_np:8.3f} s")
    if _accel.USE_NUMBA:
        run(False, K, f, args.spacing, 1)  # warm the JIT
        t_nb, out_nb = run(False, K, f, args.spacing, args.repeat)
        dev = float(np.max(np.abs(out_nb.values - out_np.values)))
        print(f"numba          : {t_nb:8.3f} s   speedup x{t_np / t_nb:.2f}")
        print(f"max |numba - numpy| = {dev:.3g}")
    else:
        print("numba          :    disabled (PHASELAB_NO_NUMBA)")


if __name__ == "__main__":
    main()
