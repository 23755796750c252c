"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 200]

Also times a full panel particle filter under each backend by launching a
subprocess with ``PANELPOMP_DISABLE_NUMBA`` set accordingly.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from panelpomp import kernels

FILTER_SNIPPET = """
import time
from panelpomp import build_panel_gompertz, panel_particle_filter, kernels
m = build_panel_gompertz(U=10, N=50, seed=1)
panel_particle_filter(m, J=100, seed=0)
t = time.perf_counter()
panel_particle_filter(m, J=2000, seed=0)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def cases(rng):
    J = 1000
    logw = rng.normal(size=J) * 3.0
    probs = np.exp(logw - logw.max())
    probs /= probs.sum()
    targets = rng.random(J)
    U, N = 50, 100
    W = rng.normal(size=(U, N))
    steps = np.ones((U, N), dtype=np.int64)
    par = [np.full(U, v) for v in (0.0, np.exp(-0.1), 0.1, 0.1, 0.0)]
    x = np.sort(rng.uniform(0, 1, 40))
    y = -(x - 0.5) ** 2 + rng.normal(scale=0.01, size=x.size)
    grid = np.linspace(0, 1, 1000)
    return {
        "log_weight_summary (J=1000)": ("log_weight_summary", (logw, np.log(1e-300))),
        "resample_indices (J=1000)": ("resample_indices", (probs, targets)),
        "kalman_loglik (U=50, N=100)": ("kalman_loglik", (W, steps, *par)),
        "local_quadratic (n=40, grid=1000)": ("local_quadratic", (x, y, grid, 0.75)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for label, (name, inputs) in cases(rng).items():
        times = {}
        for backend in ("numpy", "numba"):
            fn = getattr(kernels.IMPLEMENTATIONS[backend], name)
            fn(*inputs)  # compile / warm up
            times[backend] = min(timeit.repeat(lambda: fn(*inputs), number=1,
                                               repeat=args.repeat)) * 1e6
        print(f"{label:36s} {times['numpy']:10.1f} {times['numba']:10.1f} "
              f"{times['numpy'] / times['numba']:8.2f}")

    print("\npanel filter U=10, N=50, J=2000")
    for flag in ("0", "1"):
        env = dict(os.environ, PANELPOMP_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", FILTER_SNIPPET], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:6s} {float(out[1]):.3f} s")


if __name__ == "__main__":
    main()
