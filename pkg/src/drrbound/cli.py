"""Command-line front end: ``drrbound {analyze,compare,simulate,check} SPEC``.

Exit codes: 0 when the run completed (infinite bounds included), 2 for
unusable input, 3 when ``check`` observes a delay above a computed bound,
1 for any other failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys

from .analysis import COMPARE_METHODS, Analysis, analyze, summary, to_csv
from .graph import to_dot
from .model import SpecError, load_spec, validate
from .sim import POLICIES, SimReport, SimScenario, check_bounds, simulate
from .state import AnalysisContext

log = logging.getLogger("drrbound")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_VIOLATION = 0, 1, 2, 3


class InputError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("spec", help="network description (YAML)")
    p.add_argument("--utilization", type=float, default=None, help="multiply every flow rate by X")
    p.add_argument("--output", "-o", default=None, help="CSV destination (default: stdout)")
    p.add_argument("--verbose", "-v", action="store_true")


def _analysis_flags(p: argparse.ArgumentParser, methods: bool = True) -> None:
    if methods:
        p.add_argument("--method", default="full",
                       help="comma-separated list of: " + ", ".join(COMPARE_METHODS))
    p.add_argument("--impl", choices=("1", "2", "generic"), default="2", help="refinement schedule")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timeout", type=float, default=None, help="refinement budget in seconds")
    p.add_argument("--seed", type=int, default=0, help="schedule seed of the generic scheme")
    p.add_argument("--cut-seed", type=int, default=None, help="permute the cut-set search order")
    p.add_argument("--no-packetizer", action="store_true", help="drop the per-hop packet corrections")
    p.add_argument("--backend", choices=("highs", "simplex"), default="highs", help="LP solver")
    p.add_argument("--emit-lp", metavar="DIR", default=None, help="write every linear program to DIR")
    p.add_argument("--trace", metavar="FILE", default=None, help="write the refinement log")
    p.add_argument("--dot", metavar="FILE", default=None, help="write class graphs and cuts (Graphviz)")
    p.add_argument("--summary", metavar="FILE", default=None, help="summary destination (default: stderr)")


def _sim_flags(p: argparse.ArgumentParser, trace: bool = True) -> None:
    p.add_argument("--seeds", type=int, default=10, help="number of simulation seeds")
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--policy", choices=POLICIES, default="greedy")
    p.add_argument("--horizon", type=float, default=None, help="seconds of source activity")
    if trace:
        p.add_argument("--trace", metavar="FILE", default=None, help="event trace of the first seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drrbound", description="Delay bounds for DRR networks.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("analyze", help="compute per-flow end-to-end delay bounds")
    _common(p)
    _analysis_flags(p)
    p = sub.add_parser("compare", help="run every method side by side")
    _common(p)
    _analysis_flags(p, methods=False)
    p = sub.add_parser("simulate", help="packet-level simulation")
    _common(p)
    _sim_flags(p)
    p = sub.add_parser("check", help="analyze, simulate and compare")
    _common(p)
    _analysis_flags(p, methods=False)
    _sim_flags(p, trace=False)
    p.add_argument("--sim-trace", metavar="FILE", default=None, help="event trace of the first seed")
    return ap


def _load(args):
    if not os.path.exists(args.spec):
        raise InputError(f"{args.spec}: no such file")
    try:
        spec = load_spec(args.spec, args.utilization)
    except SpecError as exc:
        raise InputError(str(exc)) from exc
    except (OSError, ValueError) as exc:
        raise InputError(f"{args.spec}: {exc}") from exc
    diags = validate(spec)
    for d in diags:
        print(str(d), file=sys.stderr)
    if any(d.level == "error" for d in diags):
        raise InputError(f"{args.spec}: invalid network description")
    return spec


def _write(path: str | None, text: str, default=None) -> None:
    if path is None:
        (default or sys.stdout).write(text)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _run_analysis(spec, args, methods) -> Analysis:
    if args.emit_lp:
        os.makedirs(args.emit_lp, exist_ok=True)
    if args.dot:
        ctx = AnalysisContext(spec, args.cut_seed)
        _write(args.dot, to_dot(spec, [ctx.forests[c] for c in ctx.classes]))
    an = analyze(spec, methods, impl=args.impl, workers=args.workers, timeout=args.timeout,
                 cut_seed=args.cut_seed, packetizer=not args.no_packetizer, backend=args.backend,
                 seed=args.seed, emit_dir=args.emit_lp)
    trace_path = getattr(args, "trace", None) if args.command != "check" else None
    if trace_path:
        logs = [r.log for r in an.results.values() if r.log is not None]
        if logs:
            logs[0].dump(trace_path)
        else:
            _write(trace_path, "")
    return an


def _sim_csv(spec, reports: list[tuple[int, SimReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "flow", "class", "max_delay", "packets"])
    for seed, rep in reports:
        for f in spec.flows:
            d = rep.flow_delay.get(f.id)
            w.writerow([seed, f.id, spec.classes[f.cls], "" if d is None else f"{d:.9g}",
                        len(rep.emissions.get(f.id, []))])
    return buf.getvalue()


def _simulate_all(spec, args, trace_path):
    reports = []
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        want_trace = trace_path is not None and seed == args.first_seed
        rep = simulate(SimScenario(spec, args.policy, args.horizon, seed, trace=want_trace))
        if want_trace:
            _write(trace_path, "\n".join(rep.trace) + "\n")
        if rep.empty:
            print(f"warning: seed {seed}: no packet completed before the horizon", file=sys.stderr)
        reports.append((seed, rep))
    return reports


def cmd_analyze(args, methods) -> int:
    spec = _load(args)
    an = _run_analysis(spec, args, methods)
    _write(args.output, to_csv(an))
    _write(args.summary, summary(an), sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _load(args)
    reports = _simulate_all(spec, args, args.trace)
    _write(args.output, _sim_csv(spec, reports))
    return EXIT_OK


def cmd_check(args) -> int:
    spec = _load(args)
    an = _run_analysis(spec, args, ["full"])
    res = an.results["full"]
    reports = _simulate_all(spec, args, args.sim_trace)
    failures = 0
    lines = []
    for seed, rep in reports:
        verdict = check_bounds(rep, res.snapshot, res.bounds)
        lines.append(f"seed {seed}: {'pass' if verdict.ok else 'FAIL'}")
        lines.extend(f"  {v}" for v in verdict.violations)
        failures += not verdict.ok
    _write(args.output, to_csv(an))
    _write(args.summary, summary(an) + "\n".join(lines) + "\n", sys.stderr)
    return EXIT_VIOLATION if failures else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "analyze":
            methods = [m.strip() for m in args.method.split(",") if m.strip()]
            bad = [m for m in methods if m not in COMPARE_METHODS]
            if bad or not methods:
                raise InputError(f"unknown method {', '.join(bad) or '(none)'}")
            return cmd_analyze(args, methods)
        if args.command == "compare":
            return cmd_analyze(args, list(COMPARE_METHODS))
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_check(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - report, do not dump a traceback on users
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
