"""ROA estimates of the sequential method for the built-in systems.

    python scripts/roa_table.py [--samples 10000] [--csv out.csv]
"""

import argparse
import time

from seqsos.poly import parse_polynomial
from seqsos.roa import RoaSpec, build, cubic_1d, init_guess, random_cubic, van_der_pol, verify_certificate
from seqsos.seq import run

CASES = [
    ("cubic_1d", lambda: RoaSpec(cubic_1d(), p=parse_polynomial("x1^2", 1))),
    ("van_der_pol d2", lambda: RoaSpec(van_der_pol(), deg_v=2)),
    ("van_der_pol d4", lambda: RoaSpec(van_der_pol(), deg_v=4)),
    ("random_cubic n3 d2", lambda: RoaSpec(random_cubic(3, 0), deg_v=2)),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--csv")
    args = ap.parse_args()
    rows = ["case,b,iterations,status,wall_time,total_cost,verified"]
    print(f"{'case':<20} {'b':>11} {'iters':>6} {'time[s]':>8} {'sum N^3M':>11}  status / verified")
    for name, make in CASES:
        spec = make()
        prob = build(spec)
        t0 = time.perf_counter()
        res = run(prob, init_guess(spec, prob), keep_history=False)
        wall = time.perf_counter() - t0
        b = -res.logs[-1].objective
        ok = verify_certificate(spec, res.iterate, nsamples=args.samples, prob=prob).passed if args.samples else None
        print(f"{name:<20} {b:>11.7f} {res.iterations:>6} {wall:>8.2f} {float(res.total_cost):>11.3e}"
              f"  {res.status.value} / {ok}")
        rows.append(f"{name},{b!r},{res.iterations},{res.status.value},{wall:.3f},{res.total_cost},{ok}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
