"""Compiled vs numpy element kernel, alone and inside a full Newton step.

    python3 benchmarks/bench_kernels.py [--sizes 32,128,512] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from sdflow import _backend
from sdflow.assembly import StepUnknowns
from sdflow.geometry import make_ellipse
from sdflow.newton import bootstrap_curvature, solve_time_step


def _setup(m):
    c = make_ellipse(2.0, 1.0, m)
    p, q = bootstrap_curvature(c)
    rng = np.random.default_rng(0)
    guess = StepUnknowns(c.nodes + 1e-3 * rng.standard_normal(c.nodes.shape), p, q)
    return c, guess


def _best(stmt, repeat, number):
    return min(timeit.repeat(stmt, repeat=repeat, number=number)) / number


def bench(sizes, repeat):
    kernels = ["python"] + (["cython"] if _backend._kernels is not None else [])
    print(f"{'M':>6} {'what':>8} " + " ".join(f"{k:>12}" for k in kernels) + f" {'speedup':>9}")
    for m in sizes:
        c, guess = _setup(m)
        args = (np.ascontiguousarray(c.nodes), guess.positions, guess.p, guess.q, 1e-4, True, True)
        rows = {"kernel": [], "step": []}
        for name in kernels:
            _backend.use_backend(name)
            rows["kernel"].append(_best(lambda: _backend.element_system(*args), repeat, 20))
            rows["step"].append(_best(lambda: solve_time_step(c, guess, 1e-4), repeat, 5))
        for what, t in rows.items():
            speed = f"{t[0] / t[-1]:8.1f}x" if len(t) > 1 else ""
            print(f"{m:6d} {what:>8} " + " ".join(f"{v * 1e3:10.3f}ms" for v in t) + f" {speed:>9}")
    _backend.use_backend(kernels[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="32,128,512")
    ap.add_argument("--repeat", type=int, default=5)
    ns = ap.parse_args(argv)
    bench([int(s) for s in ns.sizes.split(",")], ns.repeat)


if __name__ == "__main__":
    main()
