"""Command-line front end.

Subcommands ``solve``, ``roa``, ``baseline``, ``compare`` and ``check-sos``.
Exit codes: 0 converged (and verified), 1 usage or parse error, 2 iteration
limit, 3 solver failure, 4 certificate verification failure or SOS refusal.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import gram, problem_file
from .baseline import BaselineConfig, BaselineResult, run_baseline
from .poly import ParseError, parse_polynomial
from .roa import SYSTEMS, PolySystem, RoaSpec, build, init_guess, verify_certificate
from .seq import IterationLog, RunResult, RunStatus, SeqConfig, final_kkt, format_table, logs_to_csv, run

EXIT_OK, EXIT_USAGE, EXIT_MAXED, EXIT_FAILED, EXIT_VERIFY = 0, 1, 2, 3, 4

log = logging.getLogger("seqsos")


# ---------------------------------------------------------------------------
# serialization


def _num(v: float) -> str:
    if not math.isfinite(v):
        return "null"
    s = format(v, ".17g")
    return s if any(c in s for c in ".eE") else s + ".0"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, type(None), str)):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass
class RunReport:
    method: str
    system: str
    final_value: float
    iterations: int
    wall_time: float
    total_solves: int
    total_cost: int
    status: str
    message: str = ""
    degrees: dict = field(default_factory=dict)
    b: float | None = None
    verification: dict | None = None
    kkt: dict | None = None

    def to_json(self) -> str:
        return dumps(asdict(self))


def _timestamp_header(what: str) -> str:
    now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return f"seqsos {what} generated {now}"


def baseline_csv(res: BaselineResult, header: str | None = None) -> str:
    """Baseline log in the sequential CSV schema plus a ``solves`` column."""
    fields = IterationLog.FIELDS + ["solves"]
    rows = []
    for l in res.logs:
        d = {f: "" for f in fields}
        d.update(k=l.k, objective=l.objective, N=l.N, M=l.M, cost_order=l.cost_order, solves=l.solves)
        rows.append(d)
    return logs_to_csv(rows, fields, header)


# ---------------------------------------------------------------------------
# comparison


def spec_key(spec: RoaSpec) -> tuple:
    return (
        tuple(str(f) for f in spec.system.phi), spec.deg_v, spec.deg_s1, spec.deg_s2,
        str(spec.p), spec.iota, str(spec.rho), spec.reduced_bases,
    )


def cost_ratio(a: int, b: int) -> str:
    """``a / b`` to 2 significant digits."""
    if b == 0:
        return "nan" if a == 0 else "inf"
    return f"{a / b:.2g}"


def report_comparison(seq: RunResult, base: BaselineResult, seq_spec: RoaSpec,
                      base_spec: RoaSpec | None = None) -> tuple[str, str]:
    """Per-method totals as a plain table and CSV text."""
    if base_spec is not None and spec_key(seq_spec) != spec_key(base_spec):
        raise ValueError("the two runs were made on different specs")
    rows = [
        ("sequential", seq.logs[-1].objective if seq.logs else math.nan, seq.iterations,
         seq.solves, seq.total_cost, seq.wall_time, seq.status.value),
        ("baseline", -base.b if base.logs else math.nan, base.iterations,
         base.total_solves, base.total_cost, base.wall_time, base.status),
    ]
    ratio = cost_ratio(seq.total_cost, base.total_cost)
    lines = [f"{'method':<11} {'final':>12} {'iters':>6} {'solves':>7} {'sum N^3M':>12} {'time[s]':>8}  status"]
    for name, val, it, nsol, cost, wt, st in rows:
        lines.append(f"{name:<11} {val:>12.7g} {it:>6} {nsol:>7} {float(cost):>12.4e} {wt:>8.2f}  {st}")
    lines.append(f"cost ratio sequential/baseline: {ratio}")
    csv_lines = ["method,final_value,iterations,solves,total_cost_order,wall_time,status,cost_ratio"]
    for name, val, it, nsol, cost, wt, st in rows:
        csv_lines.append(f"{name},{_num(val) if math.isfinite(val) else 'nan'},{it},{nsol},{cost},{_num(wt)},{st},{ratio}")
    return "\n".join(lines), "\n".join(csv_lines) + "\n"


# ---------------------------------------------------------------------------
# argument handling


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run options")
    g.add_argument("--tol", type=float, help="primal change tolerance (default 1e-6)")
    g.add_argument("--dual-tol-rel", type=float, help="relative dual change tolerance (default 1e-6)")
    g.add_argument("--eta", type=float, help="merit slope (default 1e-3)")
    g.add_argument("--max-iters", type=int, help="outer iteration limit")
    g.add_argument("--seed", type=int, default=0, help="seed of the sampling oracles")
    g.add_argument("--log", metavar="CSV", help="write the iteration log here")
    g.add_argument("--json", metavar="PATH", help="write a JSON report ('-' for stdout)")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _roa_flags(p):
    p.add_argument("--system", required=True, help=f"problem file or one of {', '.join(SYSTEMS)}")
    p.add_argument("--deg-v", type=int, nargs="+", help="Lyapunov degree(s); several values run a sweep")
    p.add_argument("--deg-s1", type=int)
    p.add_argument("--deg-s2", type=int)
    p.add_argument("--verify-samples", type=int, default=None, help="sampling points (0 skips verification)")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs for a degree sweep")


def make_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="seqsos", description="Sequential SOS programming for region-of-attraction estimates.")
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    s = sub.add_parser("solve", parents=[common], help="run the sequential method on a problem file")
    s.add_argument("file")
    for name, text in (("roa", "sequential ROA estimate"), ("baseline", "V-s coordinate descent"),
                       ("compare", "sequential vs baseline cost comparison")):
        _roa_flags(sub.add_parser(name, parents=[common], help=text))
    c = sub.add_parser("check-sos", parents=[common], help="Gram certificate search for one polynomial")
    c.add_argument("poly")
    c.add_argument("--nvars", type=int, help="number of variables (default: highest index used)")
    return parser


def _seq_config(args, opts: dict) -> SeqConfig:
    kw = {}
    for flag, key, okey in (("tol", "eps_primal", "tol"), ("dual_tol_rel", "eps_dual_rel", "dual_tol_rel"),
                            ("eta", "eta", "eta"), ("max_iters", "max_iters", "max_iters"),
                            ("r_floor", "r_floor", "r_floor"), ("solver_tol", "solver_tol", "solver_tol")):
        val = getattr(args, flag, None)
        val = opts.get(okey) if val is None else val
        if val is not None:
            kw[key] = val
    return SeqConfig(**kw)


def _baseline_config(args, opts: dict) -> BaselineConfig:
    kw = {}
    mi = args.max_iters if args.max_iters is not None else opts.get("max_iters")
    if mi is not None:
        kw["max_iters"] = mi
    if opts.get("solver_tol") is not None:
        kw["solver_tol"] = opts["solver_tol"]
    return BaselineConfig(**kw)


def resolve_system(arg: str) -> tuple[str, PolySystem | None, dict]:
    """``(name, system, file options)`` for a builtin name or a problem file."""
    path = Path(arg)
    if path.is_file():
        pf = problem_file.load(path)
        if pf.kind != "roa":
            raise _Usage(f"{arg}: not a region-of-attraction file (it declares [variables]); use 'solve'")
        return path.stem, PolySystem(list(pf.dynamics), path.stem), dict(pf.options)
    if arg in SYSTEMS:
        return arg, SYSTEMS[arg](), {}
    raise _Usage(f"--system {arg!r}: no such file or builtin system")


def _spec_for(system: PolySystem, opts: dict, deg_v: int, args) -> RoaSpec:
    return RoaSpec(
        system, deg_v=deg_v,
        deg_s1=args.deg_s1 if args.deg_s1 is not None else opts.get("deg_s1"),
        deg_s2=args.deg_s2 if args.deg_s2 is not None else opts.get("deg_s2"),
        p=opts.get("shape"), iota=opts.get("iota", 1.0), rho=opts.get("rho"),
    )


def _verify(spec, xi_or_iterate, args, opts, prob):
    n = args.verify_samples if args.verify_samples is not None else opts.get("verify_samples", 10_000)
    if n <= 0:
        return None
    return verify_certificate(spec, xi_or_iterate, nsamples=n, seed=args.seed, prob=prob).summary()


def _exit_for(status: str, verification: dict | None) -> int:
    code = {"converged": EXIT_OK, "stalled": EXIT_OK, "maxed": EXIT_MAXED, "failed": EXIT_FAILED}[status]
    if code == EXIT_OK and verification is not None and not verification["passed"]:
        return EXIT_VERIFY
    return code


def _run_seq_roa(name, spec: RoaSpec, args, opts) -> tuple[RunReport, str, str]:
    prob = build(spec)
    res = run(prob, init_guess(spec, prob), _seq_config(args, opts), keep_history=False)
    ver = _verify(spec, res.iterate, args, opts, prob) if res.status is not RunStatus.FAILED else None
    kkt = final_kkt(prob, res)
    rep = RunReport(
        "sequential", name, res.logs[-1].objective if res.logs else math.nan, res.iterations,
        res.wall_time, res.solves, res.total_cost, res.status.value, res.message,
        {"deg_v": spec.deg_v, "deg_s1": spec.deg_s1, "deg_s2": spec.deg_s2},
        float(prob.split(res.iterate.xi)["b"].coeff((0,) * spec.n)), ver, asdict(kkt),
    )
    csv_text = logs_to_csv(res.logs, header=_timestamp_header(f"roa {name} deg_v={spec.deg_v}"))
    return rep, csv_text, format_table(res.logs)


def _run_base_roa(name, spec: RoaSpec, args, opts) -> tuple[RunReport, str, str]:
    prob = build(spec)
    res = run_baseline(spec, init_guess(spec, prob), _baseline_config(args, opts))
    ver = _verify(spec, res.iterate(prob), args, opts, prob) if res.logs else None
    rep = RunReport(
        "baseline", name, -res.b if res.logs else math.nan, res.iterations, res.wall_time,
        res.total_solves, res.total_cost, res.status, res.message,
        {"deg_v": spec.deg_v, "deg_s1": spec.deg_s1, "deg_s2": spec.deg_s2},
        res.b if res.logs else None, ver,
    )
    csv_text = baseline_csv(res, _timestamp_header(f"baseline {name} deg_v={spec.deg_v}"))
    table = "\n".join(f"{l.k:>3} b={l.b:.8g} solves={l.solves} N^3M={float(l.cost_order):.3e}" for l in res.logs)
    return rep, csv_text, table


def _job(payload):
    kind, name, spec, args, opts = payload
    fn = _run_seq_roa if kind == "roa" else _run_base_roa
    return fn(name, spec, args, opts)


def _log_path(base: str, deg: int, sweep: bool) -> Path:
    p = Path(base)
    return p.with_name(f"{p.stem}_d{deg}{p.suffix}") if sweep else p


def _emit_json(args, payload: str):
    if not args.json:
        return
    if args.json == "-":
        print(payload)
    else:
        Path(args.json).write_text(payload + "\n", encoding="utf-8")


def _print_summary(rep: RunReport):
    print(f"final value {rep.final_value:.10g}   iterations {rep.iterations}   time {rep.wall_time:.2f} s"
          f"   status {rep.status}")
    if rep.verification is not None:
        v = rep.verification
        print(f"verification {'passed' if v['passed'] else 'FAILED'} (gram {v['gram_ok']}, "
              f"{v['samples']} samples ok {v['sampling_ok']}, trajectories {v['trajectory_ok']})")


def cmd_roa_like(args, kind: str) -> int:
    name, system, opts = resolve_system(args.system)
    degs = args.deg_v or [opts.get("deg_v", 2)]
    specs = [_spec_for(system, opts, d, args) for d in degs]
    payloads = [(kind, name, s, args, opts) for s in specs]
    if args.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            outs = list(ex.map(_job, payloads))
    else:
        outs = [_job(p) for p in payloads]
    sweep = len(outs) > 1
    codes = []
    for spec, (rep, csv_text, table) in zip(specs, outs):
        if sweep:
            print(f"== deg_v = {spec.deg_v}")
        print(table)
        _print_summary(rep)
        if args.log:
            _log_path(args.log, spec.deg_v, sweep).write_text(csv_text, encoding="utf-8")
        codes.append(_exit_for(rep.status, rep.verification))
    reports = [r for r, _, _ in outs]
    _emit_json(args, reports[0].to_json() if not sweep else dumps([asdict(r) for r in reports]))
    return max(codes)


def cmd_compare(args) -> int:
    name, system, opts = resolve_system(args.system)
    spec = _spec_for(system, opts, (args.deg_v or [opts.get("deg_v", 2)])[0], args)
    prob = build(spec)
    init = init_guess(spec, prob)
    seq_res = run(prob, init, _seq_config(args, opts), keep_history=False)
    base_res = run_baseline(spec, init, _baseline_config(args, opts))
    table, csv_text = report_comparison(seq_res, base_res, spec, spec)
    print(table)
    if args.log:
        Path(args.log).write_text(f"# {_timestamp_header('compare ' + name)}\n" + csv_text, encoding="utf-8")
    _emit_json(args, dumps({
        "system": name, "deg_v": spec.deg_v,
        "sequential": {"final_value": seq_res.logs[-1].objective if seq_res.logs else None,
                       "iterations": seq_res.iterations, "solves": seq_res.solves,
                       "total_cost": seq_res.total_cost, "status": seq_res.status.value},
        "baseline": {"final_value": -base_res.b if base_res.logs else None,
                     "iterations": base_res.iterations, "solves": base_res.total_solves,
                     "total_cost": base_res.total_cost, "status": base_res.status},
        "cost_ratio": cost_ratio(seq_res.total_cost, base_res.total_cost),
    }))
    return EXIT_FAILED if seq_res.status is RunStatus.FAILED else EXIT_OK


def cmd_solve(args) -> int:
    pf = problem_file.load(args.file)
    prob, init = pf.to_problem()
    cfg = _seq_config(args, pf.options)
    res = run(prob, init, cfg, keep_history=False)
    print(format_table(res.logs))
    ver = None
    if pf.kind == "roa":
        spec = pf.to_spec()
        n = pf.options.get("verify_samples", 10_000)
        if n > 0 and res.status is not RunStatus.FAILED:
            ver = verify_certificate(spec, res.iterate, nsamples=n, seed=args.seed, prob=prob).summary()
    kkt = final_kkt(prob, res)
    rep = RunReport("sequential", Path(args.file).stem, res.logs[-1].objective if res.logs else math.nan,
                    res.iterations, res.wall_time, res.solves, res.total_cost, res.status.value,
                    res.message, verification=ver, kkt=asdict(kkt))
    _print_summary(rep)
    print(f"kkt residual: stationarity {kkt.stationarity:.2e}  complementarity "
          f"{kkt.comp_primal:.2e}/{kkt.comp_dual:.2e}  membership {kkt.feas_primal:.2e}")
    if args.log:
        Path(args.log).write_text(logs_to_csv(res.logs, header=_timestamp_header(f"solve {args.file}")),
                                  encoding="utf-8")
    _emit_json(args, rep.to_json())
    return _exit_for(res.status.value, ver)


def cmd_check_sos(args) -> int:
    text = args.poly
    n = args.nvars
    if n is None:
        idx = [int(m) for m in re.findall(r"x(\d+)", text)]
        n = max(idx, default=1)
    p = parse_polynomial(text, n)
    res = gram.check_sos(p)
    if isinstance(res, gram.SosCertificate):
        print(f"SOS: min_eig {res.min_eig:.3e}, residual {res.residual:.3e}, basis size {len(res.gram.basis)}")
        _emit_json(args, res.to_json())
        return EXIT_OK
    print(f"not certified: {res.reason}")
    _emit_json(args, dumps({"accepted": False, "reason": res.reason, "margin": res.margin}))
    return EXIT_VERIFY


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except _Usage as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "solve":
            return cmd_solve(args)
        if args.cmd in ("roa", "baseline"):
            return cmd_roa_like(args, args.cmd)
        if args.cmd == "compare":
            return cmd_compare(args)
        return cmd_check_sos(args)
    except (_Usage, ParseError, OSError) as e:
        print(f"seqsos: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"seqsos: invalid input: {e}", file=sys.stderr)
        return EXIT_USAGE
    except gram.SolverError as e:
        print(f"seqsos: solver failure: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
