"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 7] [--solver]

Each kernel is timed on the same inputs under both backends; the table lists
the best-of-``repeat`` time per call and the speed-up. ``--solver`` also times
one full Algorithm-2-style solve per backend.
"""

import argparse
import timeit

import numpy as np

from papcbeam import _fallback, kernels
from papcbeam.model import ScenarioConfig
from papcbeam.offsetmax import solve_offset_max_papc


def crandn(rng, *shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2.0)


def cases(rng):
    h4 = np.ascontiguousarray(crandn(rng, 4, 3) * 3)
    gamma = np.full(3, 10**0.3)
    nu0 = gamma / ((1 + gamma) * np.sum(np.abs(h4) ** 2, axis=0))
    base = rng.uniform(0.5, 2, 4)
    h64 = crandn(rng, 64, 8)
    hn64 = np.ascontiguousarray(h64 / np.linalg.norm(h64, axis=0))
    u16 = np.ascontiguousarray(crandn(rng, 16, 4))
    return {
        "antenna_powers N=16 K=4": lambda m: m.antenna_powers(u16, np.ones(4)),
        "project_duals N=8": (lambda q, p: lambda m: m.project_duals(q, p))(rng.normal(0, 2, 8), rng.uniform(0.5, 2, 8)),
        "nu_fixed_point N=4 K=3": lambda m: m.nu_fixed_point(base, h4, gamma, nu0.copy(), 1e-10, 500, 5, 0.5),
        "one_shot_mrt N=64 K=8": lambda m: m.one_shot_mrt(hn64, np.full(8, 0.1), np.full(64, 1 / 64)),
    }


def best(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--solver", action="store_true")
    args = ap.parse_args(argv)
    if kernels._ext is None:
        print("compiled kernels not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python (us)':>12s} {'cython (us)':>12s} {'speed-up':>9s}")
    for name, call in cases(rng).items():
        py = best(lambda: call(_fallback), args.repeat)
        cy = best(lambda: call(kernels._ext), args.repeat)
        print(f"{name:28s} {py * 1e6:12.2f} {cy * 1e6:12.2f} {py / cy:8.1f}x")
    if args.solver:
        cfg = ScenarioConfig.uniform(4, 3, 40.0, sinr_target=10**0.3, error_variance=0.04)
        h = crandn(rng, 4, 3) * 4
        times = {}
        for backend in ("python", "cython"):
            prev = kernels.use_backend(backend)
            try:
                times[backend] = best(lambda: solve_offset_max_papc(cfg, h, "robust"), 3)
            finally:
                kernels.use_backend(prev)
        print(f"{'robust offset solve N=4 K=3':28s} {times['python'] * 1e6:12.2f} {times['cython'] * 1e6:12.2f} "
              f"{times['python'] / times['cython']:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
