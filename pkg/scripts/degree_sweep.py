"""Certified level b and program size of the sequential method as deg_v grows.

    python scripts/degree_sweep.py [--system van_der_pol] [--degrees 2 4]
"""

import argparse
import time

from seqsos.roa import SYSTEMS, RoaSpec, build, init_guess
from seqsos.seq import run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--system", default="van_der_pol", choices=sorted(SYSTEMS))
    ap.add_argument("--degrees", type=int, nargs="+", default=[2, 4])
    args = ap.parse_args()
    system = SYSTEMS[args.system]()
    print(f"{'deg_v':>5} {'b':>11} {'iters':>6} {'N':>5} {'M':>5} {'time[s]':>8}  status")
    for d in args.degrees:
        spec = RoaSpec(system, deg_v=d)
        prob = build(spec)
        t0 = time.perf_counter()
        res = run(prob, init_guess(spec, prob), keep_history=False)
        last = res.logs[-1]
        print(f"{d:>5} {-last.objective:>11.7f} {res.iterations:>6} {last.N:>5} {last.M:>5} "
              f"{time.perf_counter() - t0:>8.2f}  {res.status.value}")


if __name__ == "__main__":
    main()
