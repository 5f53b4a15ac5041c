"""Shared-memory refinement of the bound state.

A refinement reads one snapshot, computes improved values for a fixed part
of the state, and min-merges them under the writer lock. Because every
refinement is monotone and merges only keep improvements, any interleaving
converges to the same limit; the runners below differ only in scheduling.
"""
from __future__ import annotations

import math
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

from .curves import INF
from .drr import output_burst_refine
from .plp import backlog_edge, backlog_node, fp_plp
from .state import AnalysisContext, Delta, SharedState, Snapshot, relative_gap
from .tfa import node_arrival, per_node_delay

AUDIT_GRID_POINTS = 64
IMPL2_RTOL = 1e-5
STATE_RTOL = 1e-6
MAX_PASSES = 200


@dataclass(frozen=True)
class Refinement:
    """``kind`` is one of fpplp, backlog_node, backlog_edge, drr, delay."""

    kind: str
    cls: int | None = None
    node: str | None = None
    edge: tuple[str, str] | None = None

    def __str__(self) -> str:
        parts = [self.kind]
        if self.cls is not None:
            parts.append(f"c{self.cls}")
        if self.node is not None:
            parts.append(self.node)
        if self.edge is not None:
            parts.append(f"{self.edge[0]}->{self.edge[1]}")
        return ":".join(parts)


@dataclass
class LogRecord:
    refinement: str
    read: float
    locked: float
    unlocked: float
    pre: Snapshot
    post: Snapshot
    changed: list[str]

    def line(self) -> str:
        keys = ",".join(self.changed) if self.changed else "-"
        return (f"{self.refinement}\tread={self.read:.6f}\tlock={self.locked:.6f}\t"
                f"unlock={self.unlocked:.6f}\tversion={self.pre.version}->{self.post.version}\tchanged={keys}")


class RefinementLog:
    def __init__(self):
        self.records: list[LogRecord] = []
        self._lock = threading.Lock()

    def add(self, rec: LogRecord) -> None:
        with self._lock:
            self.records.append(rec)

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in sorted(self.records, key=lambda r: r.locked):
                fh.write(rec.line() + "\n")


# ------------------------------------------------------------ refinements

def compute(ctx: AnalysisContext, snap: Snapshot, h: Refinement, emit_dir: str | None = None) -> Delta:
    """Value of refinement ``h`` on a snapshot."""
    delta = Delta()
    if h.kind == "fpplp":
        for sid, val in fp_plp(ctx, snap, h.cls, emit_dir).items():
            delta.zcut[(h.cls, sid)] = val
    elif h.kind == "backlog_node":
        delta.b_node[(h.node, h.cls)] = backlog_node(ctx, snap, h.node, h.cls, emit_dir)
    elif h.kind == "backlog_edge":
        delta.b_edge[(h.cls, h.edge)] = backlog_edge(ctx, snap, h.cls, h.edge, emit_dir)
    elif h.kind == "drr":
        delta.beta[h.node] = tuple(drr_service(ctx, snap, h.node))
    elif h.kind == "delay":
        delta.delay[(h.node, h.cls)] = node_delay(ctx, snap, h.node, h.cls)
    else:
        raise ValueError(f"unknown refinement {h.kind!r}")
    return delta


def drr_service(ctx: AnalysisContext, snap: Snapshot, v: str):
    """Service curves at v from output burstiness bounds of every class."""
    nd = ctx.node(v)
    n = ctx.spec.n_classes
    bursts, rates = [0.0] * n, [0.0] * n
    for c in range(n):
        g = ctx.graphs.get(c)
        if g is None or v not in g.vertices:
            continue
        b = snap.b_node.get((v, c), INF)
        bursts[c] = b + ctx.packet_slack(v, c) if math.isfinite(b) else INF
        rates[c] = sum(f.rate for f in g.flows_at(v))
    return output_burst_refine(nd, list(snap.beta[v]), bursts, rates)


def node_delay(ctx: AnalysisContext, snap: Snapshot, v: str, c: int) -> float:
    g = ctx.graphs[c]
    bursts = {e: snap.b_edge.get((c, e), INF) for e in g.in_edges(v)}
    return per_node_delay(node_arrival(ctx, c, v, bursts), snap.beta_of(v, c))


def all_refinements(ctx: AnalysisContext) -> list[Refinement]:
    out = []
    for c in ctx.classes:
        if ctx.forests[c].transit_segments:
            out.append(Refinement("fpplp", c))
        g = ctx.graphs[c]
        for v in g.vertices:
            out.append(Refinement("backlog_node", c, node=v))
            out.append(Refinement("delay", c, node=v))
        for e in g.edges:
            out.append(Refinement("backlog_edge", c, edge=e))
    for v in sorted({v for c in ctx.classes for v in ctx.graphs[c].vertices}):
        out.append(Refinement("drr", node=v))
    return out


# ---------------------------------------------------------------- engine

@dataclass
class Engine:
    ctx: AnalysisContext
    state: SharedState
    workers: int = 1
    log: RefinementLog = field(default_factory=RefinementLog)
    emit_dir: str | None = None
    deadline: float | None = None
    budget: int | None = None  # stop after this many refinements
    applied: int = 0

    def expired(self) -> bool:
        if self.budget is not None and self.applied >= self.budget:
            return True
        return self.deadline is not None and time.monotonic() > self.deadline

    def apply(self, h: Refinement) -> bool:
        """Snapshot, compute, merge. True when the state changed."""
        if self.expired():
            return False
        snap = self.state.snapshot()
        read = time.perf_counter()
        delta = compute(self.ctx, snap, h, self.emit_dir)
        changed, locked, unlocked, pre, post = self.state.write(delta)
        self.log.add(LogRecord(str(h), read, locked, unlocked, pre, post, changed))
        self.applied += 1
        return bool(changed)

    def apply_all(self, hs: Iterable[Refinement], pool: ThreadPoolExecutor | None) -> bool:
        hs = list(hs)
        if pool is None or len(hs) <= 1:
            return any([self.apply(h) for h in hs])
        return any(list(pool.map(self.apply, hs)))


def _pool(workers: int) -> ThreadPoolExecutor | None:
    return ThreadPoolExecutor(max_workers=workers) if workers > 1 else None


@dataclass
class RunResult:
    snapshot: Snapshot
    converged: bool
    passes: int
    log: RefinementLog
    applied: int


def run_generic(ctx: AnalysisContext, state: SharedState, schedule: list[Refinement] | None = None,
                workers: int = 1, seed: int = 0, timeout: float | None = None,
                max_passes: int = MAX_PASSES, emit_dir: str | None = None,
                budget: int | None = None) -> RunResult:
    """Passes over every refinement in a seeded random order until a pass changes nothing.

    Within a pass the refinements are handed to a worker pool, so reads and
    writes interleave freely.
    """
    hs = list(all_refinements(ctx) if schedule is None else schedule)
    rng = random.Random(seed)
    eng = Engine(ctx, state, workers, emit_dir=emit_dir, budget=budget,
                 deadline=None if timeout is None else time.monotonic() + timeout)
    pool = _pool(workers)
    converged = not hs
    passes = 0
    try:
        while hs and passes < max_passes and not eng.expired():
            order = hs[:]
            rng.shuffle(order)
            passes += 1
            if not eng.apply_all(order, pool) and not eng.expired():
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(state.snapshot(), converged, passes, eng.log, eng.applied)


def trees(ctx: AnalysisContext) -> list[tuple[int, list[str]]]:
    """Every tree of every class forest as (class, members leaves first)."""
    out = []
    for c in ctx.classes:
        for root, members in sorted(ctx.forests[c].trees().items()):
            out.append((c, members))
    return out


def drr_tree(eng: Engine, tree: list[str], pool: ThreadPoolExecutor | None = None) -> bool:
    """Service curves and per-node delays of one tree, upstream nodes first."""
    changed = False
    for v in tree:
        present = [c for c in eng.ctx.classes if v in eng.ctx.graphs[c].vertices]
        changed |= eng.apply_all([Refinement("backlog_node", c, node=v) for c in present], pool)
        changed |= eng.apply(Refinement("drr", node=v))
        edges = [Refinement("backlog_edge", c, edge=e) for c in present for e in eng.ctx.graphs[c].in_edges(v)]
        changed |= eng.apply_all(edges, pool)
        changed |= eng.apply_all([Refinement("delay", c, node=v) for c in present], pool)
    return changed


def _fp_block(eng: Engine, pool) -> bool:
    hs = [Refinement("fpplp", c) for c in eng.ctx.classes if eng.ctx.forests[c].transit_segments]
    return eng.apply_all(hs, pool)


def _tree_block(eng: Engine, pool) -> bool:
    ts = trees(eng.ctx)
    if pool is None:
        return any([drr_tree(eng, members) for _, members in ts])
    # trees in parallel; inside a tree the order is sequential
    return any(list(pool.map(lambda item: drr_tree(eng, item[1]), ts)))


def implementation_1(ctx: AnalysisContext, state: SharedState, workers: int = 1, timeout: float | None = None,
                     max_rounds: int = MAX_PASSES, emit_dir: str | None = None,
                     budget: int | None = None) -> RunResult:
    """Alternate the cut-burst block and the tree block until neither changes anything."""
    eng = Engine(ctx, state, workers, emit_dir=emit_dir, budget=budget,
                 deadline=None if timeout is None else time.monotonic() + timeout)
    pool = _pool(workers)
    rounds, converged = 0, False
    try:
        while rounds < max_rounds and not eng.expired():
            rounds += 1
            changed = _fp_block(eng, pool)
            changed |= _tree_block(eng, pool)
            if not changed and not eng.expired():
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(state.snapshot(), converged, rounds, eng.log, eng.applied)


def implementation_2(ctx: AnalysisContext, state: SharedState, workers: int = 1, timeout: float | None = None,
                     max_rounds: int = MAX_PASSES, emit_dir: str | None = None,
                     inner_rtol: float = IMPL2_RTOL, budget: int | None = None) -> RunResult:
    """Repeat the tree block until delays settle, then one cut-burst block; loop."""
    eng = Engine(ctx, state, workers, emit_dir=emit_dir, budget=budget,
                 deadline=None if timeout is None else time.monotonic() + timeout)
    pool = _pool(workers)
    rounds, converged = 0, False
    try:
        while rounds < max_rounds and not eng.expired():
            rounds += 1
            changed = _fp_block(eng, pool)
            quiet = 0
            while quiet < 2 and not eng.expired():
                before = state.snapshot().delay
                tree_changed = _tree_block(eng, pool)
                changed |= tree_changed
                after = state.snapshot().delay
                gain = max((_gain(before[k], after[k]) for k in after), default=0.0)
                quiet = quiet + 1 if gain < inner_rtol else 0
                if not tree_changed:
                    break
            if not changed and not eng.expired():
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(state.snapshot(), converged, rounds, eng.log, eng.applied)


def _gain(old: float, new: float) -> float:
    if not math.isfinite(old):
        return 1.0 if math.isfinite(new) else 0.0
    return (old - new) / old if old > 0 else 0.0


def refine(ctx: AnalysisContext, snap: Snapshot, impl: str = "2", workers: int = 1,
           timeout: float | None = None, seed: int = 0, emit_dir: str | None = None,
           budget: int | None = None) -> RunResult:
    state = SharedState(snap)
    if impl == "1":
        return implementation_1(ctx, state, workers, timeout, emit_dir=emit_dir, budget=budget)
    if impl == "2":
        return implementation_2(ctx, state, workers, timeout, emit_dir=emit_dir, budget=budget)
    if impl == "generic":
        return run_generic(ctx, state, workers=workers, seed=seed, timeout=timeout, emit_dir=emit_dir,
                           budget=budget)
    raise ValueError(f"unknown implementation {impl!r}")


# ---------------------------------------------------------------- audit

@dataclass
class AuditReport:
    monotone: bool
    disjoint: bool
    problems: list[str]

    @property
    def ok(self) -> bool:
        return self.monotone and self.disjoint


def audit_grid(snaps: Iterable[Snapshot], points: int = AUDIT_GRID_POINTS) -> list[float]:
    horizon = 0.0
    for s in snaps:
        for curves in s.beta.values():
            for b in curves:
                horizon = max([horizon] + b.breakpoints())
    horizon = 4 * horizon if horizon > 0 else 1.0
    return [horizon * i / (points - 1) for i in range(points)]


def monotone_step(pre: Snapshot, post: Snapshot, grid: list[float], slack: float = 1e-9) -> list[str]:
    """Components that got worse from ``pre`` to ``post``."""
    bad = []
    for name in ("delay", "zcut", "b_node", "b_edge"):
        a, b = getattr(pre, name), getattr(post, name)
        for k, old in a.items():
            new = b.get(k, INF)
            if new > old + slack * max(1.0, abs(old)) and not (math.isinf(new) and math.isinf(old)):
                bad.append(f"{name}{k}: {old} -> {new}")
    for v, curves in pre.beta.items():
        for c, (old, new) in enumerate(zip(curves, post.beta[v])):
            for t in grid:
                if new(t) < old(t) - slack * max(1.0, abs(old(t))):
                    bad.append(f"beta[{v},{c}] at {t:g}: {old(t)} -> {new(t)}")
                    break
    return bad


def audit(log: RefinementLog, history: list[Snapshot] | None = None) -> AuditReport:
    """Monotone evolution of every component and disjoint write intervals."""
    problems: list[str] = []
    records = sorted(log.records, key=lambda r: r.locked)
    chain = list(history or [])
    grid = audit_grid(chain + [r.post for r in records] + [r.pre for r in records])
    monotone = True
    for a, b in zip(chain, chain[1:]):
        bad = monotone_step(a, b, grid)
        if bad:
            monotone = False
            problems.extend(f"initial phase: {x}" for x in bad)
    for r in records:
        bad = monotone_step(r.pre, r.post, grid)
        if bad:
            monotone = False
            problems.extend(f"{r.refinement}: {x}" for x in bad)
    if chain and records:
        bad = monotone_step(chain[-1], records[0].pre, grid)
        if bad:
            monotone = False
            problems.extend(f"handover: {x}" for x in bad)
    disjoint = True
    for a, b in zip(records, records[1:]):
        if b.locked < a.unlocked:
            disjoint = False
            problems.append(f"overlapping writes: {a.refinement} and {b.refinement}")
    return AuditReport(monotone, disjoint, problems)


def states_agree(a: Snapshot, b: Snapshot, rtol: float = STATE_RTOL) -> bool:
    return relative_gap(a, b) <= rtol


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
