"""Analysis pipeline: initial phase, optional refinement, end-to-end bounds, reports."""
from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass, field

from .model import NetworkSpec
from .plp import end_to_end
from .refine import RefinementLog, refine
from .state import AnalysisContext, Snapshot
from .tfa import InitialPhase, initial_phase, tfa_end_to_end

METHODS = ("tfa", "tfa+iplp", "full")
COMPARE_METHODS = ("tfa", "tfa+iplp", "full-sum", "full-plp", "full")


@dataclass
class MethodResult:
    method: str
    bounds: dict[str, float]
    converged: bool = True
    passes: int = 0
    seconds: float = 0.0
    snapshot: Snapshot | None = None
    log: RefinementLog | None = None


@dataclass
class Analysis:
    spec: NetworkSpec
    initial: InitialPhase
    results: dict[str, MethodResult] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.results.values())

    def bounds(self, method: str) -> dict[str, float]:
        return self.results[method].bounds

    def divergent_classes(self) -> list[str]:
        return [self.spec.classes[c] for c, nodes in sorted(self.initial.unstable.items()) if nodes]


def analyze(spec: NetworkSpec, methods: tuple[str, ...] | list[str] = ("full",), impl: str = "2",
            workers: int = 1, timeout: float | None = None, cut_seed: int | None = None,
            packetizer: bool = True, backend: str = "highs", seed: int = 0,
            emit_dir: str | None = None) -> Analysis:
    """Run the requested methods, sharing the initial phase between them."""
    for m in methods:
        if m not in COMPARE_METHODS:
            raise ValueError(f"unknown method {m!r}")
    start = time.perf_counter()
    ctx = AnalysisContext(spec, cut_seed, packetizer, backend)
    ip = initial_phase(ctx)
    out = Analysis(spec, ip)
    refined: dict[bool, MethodResult] = {}

    def refined_state(aggregate: bool) -> MethodResult:
        if aggregate not in refined:
            rctx = ctx if aggregate else AnalysisContext(spec, cut_seed, packetizer, backend, aggregate=False)
            run = refine(rctx, ip.snapshot, impl, workers, timeout, seed, emit_dir)
            refined[aggregate] = MethodResult("", {}, run.converged, run.passes, 0.0, run.snapshot, run.log)
        return refined[aggregate]

    for m in methods:
        t = time.perf_counter()
        if m == "tfa":
            res = MethodResult(m, tfa_end_to_end(ctx, ip.delay), snapshot=ip.snapshot)
        elif m == "tfa+iplp":
            res = MethodResult(m, _e2e(ctx, ip.snapshot, True, emit_dir), snapshot=ip.snapshot)
        else:
            base = refined_state(m != "full-sum")
            res = MethodResult(m, _e2e(ctx, base.snapshot, m != "full-plp", emit_dir), base.converged,
                               base.passes, 0.0, base.snapshot, base.log)
        res.seconds += time.perf_counter() - t
        out.results[m] = res
    out.seconds = time.perf_counter() - start
    return out


def _e2e(ctx: AnalysisContext, snap: Snapshot, nonconvex: bool, emit_dir: str | None) -> dict[str, float]:
    return {f.id: end_to_end(ctx, snap, f.id, nonconvex, emit_dir) for f in ctx.spec.flows}


# ---------------------------------------------------------------- reports

def _cell(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x:.9g}"


def to_csv(an: Analysis) -> str:
    methods = list(an.results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["flow", "class", "path_length"] + methods + ["converged"])
    for f in an.spec.flows:
        row = [f.id, an.spec.classes[f.cls], len(f.path)]
        row += [_cell(an.results[m].bounds[f.id]) for m in methods]
        row.append("yes" if an.converged else "no")
        w.writerow(row)
    return buf.getvalue()


def summary(an: Analysis) -> str:
    lines = []
    for m, res in an.results.items():
        lines.append(f"method {m}: converged={'yes' if res.converged else 'no'} "
                     f"refinement_passes={res.passes} seconds={res.seconds:.3f}")
        for c, name in enumerate(an.spec.classes):
            vals = [res.bounds[f.id] for f in an.spec.flows if f.cls == c]
            if not vals:
                continue
            lines.append(f"  class {name}: flows={len(vals)} max={_cell(max(vals))} "
                         f"median={_cell(statistics.median(vals))}")
    div = an.divergent_classes()
    lines.append(f"divergent classes after initial phase: {', '.join(div) if div else 'none'}")
    lines.append(f"initial phase iterations: {an.initial.iterations}")
    lines.append(f"wall time: {an.seconds:.3f} s")
    return "\n".join(lines) + "\n"

