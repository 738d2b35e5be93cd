"""Time the compiled and numpy HJB kernels on the same solves.

    python3 benchmarks/bench_kernels.py [--n-xi 201 501] [--sigma 0.1] [--repeat 3]
"""

import argparse
import time

import numpy as np

from dynprice.demand import DemandModel, ProblemSpec
from dynprice.hjb import SimilarityGrid, solve_value_pde


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n-xi", type=int, nargs="+", default=[201, 501])
    ap.add_argument("--sigma", type=float, default=0.1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    spec = ProblemSpec(DemandModel.linear(1.5), 0.5, args.sigma)
    print(f"{'n_xi':>6} {'steps':>8} {'cython [s]':>11} {'python [s]':>11} {'speedup':>8} {'max |diff|':>11}")
    for n in args.n_xi:
        grid = SimilarityGrid.default(spec, n_xi=n)
        tc, sc = best_of(lambda: solve_value_pde(spec, grid, backend="cython"), args.repeat)
        tp, sp = best_of(lambda: solve_value_pde(spec, grid, backend="python"), args.repeat)
        diff = np.abs(sc.phi - sp.phi).max()
        print(f"{n:>6} {sc.report.accepted:>8} {tc:>11.3f} {tp:>11.3f} {tp / tc:>8.1f} {diff:>11.1e}")


if __name__ == "__main__":
    main()
