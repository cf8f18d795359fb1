"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--sizes 100 400 1000] [--repeat 5]

Each kernel is warmed up once per backend so JIT compilation is not timed.
Reported numbers are the best of ``--repeat`` runs, in milliseconds.
"""

import argparse
import time

import numpy as np

from fairot import _accel, kernels
from fairot.otcore import SinkhornConfig, sinkhorn


def best_of(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def cases(n, rng):
    x = rng.normal(size=n)
    y = rng.normal(1.0, 1.0, size=n)
    C = kernels.cost_matrix(x, y, 2.0)
    C = C / C.max()
    w = np.full(n, 1.0 / n)
    log_w = np.log(w)
    zeros = np.zeros(n)
    xv, yv = np.sort(rng.random(n)), np.sort(rng.random(n))
    wx, wy = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    return {
        "cost_matrix": lambda: kernels.cost_matrix(x, y, 2.0),
        "wasserstein_1d": lambda: kernels.wasserstein_1d_sorted(xv, wx, yv, wy, 1.0),
        "monotone_plan": lambda: kernels.monotone_plan(wx, wy),
        # fixed sweep count: tol 0 never triggers the early exit
        "sinkhorn_log x50": lambda: kernels.sinkhorn_log(C, log_w, log_w, 0.05, zeros, zeros, 50, 0.0),
        "plan_from_potentials": lambda: kernels.plan_from_potentials(C, zeros, zeros, 0.05),
        "sinkhorn (full solve)": lambda: sinkhorn(C, w, w, SinkhornConfig(epsilon=0.01), warn=False),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 400, 1000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    print(f"{'kernel':<24}{'n':>6}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}")
    for n in args.sizes:
        for name, fn in cases(n, np.random.default_rng(args.seed)).items():
            times = []
            for b in backends:
                with _accel.use_backend(b):
                    times.append(best_of(fn, args.repeat))
            speed = f"{times[0] / times[-1]:>9.1f}x" if len(times) > 1 else ""
            print(f"{name:<24}{n:>6}" + "".join(f"{t:>14.3f}" for t in times) + speed)


if __name__ == "__main__":
    main()
