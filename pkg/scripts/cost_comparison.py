"""Accumulated solver cost of the sequential method against the V-s baseline.

    python scripts/cost_comparison.py [--deg-v 2 4] [--csv out.csv]
"""

import argparse

from seqsos.baseline import run_baseline
from seqsos.cli import report_comparison
from seqsos.roa import RoaSpec, build, init_guess, van_der_pol
from seqsos.seq import run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--deg-v", type=int, nargs="+", default=[2, 4])
    ap.add_argument("--csv")
    args = ap.parse_args()
    out = []
    for d in args.deg_v:
        spec = RoaSpec(van_der_pol(), deg_v=d)
        prob = build(spec)
        init = init_guess(spec, prob)
        seq = run(prob, init, keep_history=False)
        base = run_baseline(spec, init)
        table, csv_text = report_comparison(seq, base, spec, spec)
        print(f"== Van der Pol, deg_v = {d}\n{table}\n")
        lines = csv_text.splitlines()
        if not out:
            out.append("deg_v," + lines[0])
        out += [f"{d},{l}" for l in lines[1:]]
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
