"""Analysis context and the shared bound state (beta, d, z_cut, b).

The state is a versioned immutable snapshot behind a writer lock. Readers
take the current snapshot without locking; writers merge a partial update
under the lock: scalar bounds keep the minimum, service curves keep the
pointwise maximum.
"""
from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable

from .curves import INF, ConvexPWL, max_convex
from .drr import degraded_curve
from .graph import ClassGraph, Edge, ForestDecomposition, Segment, build_class_graph, compute_cutset, decompose_forest
from .model import NetworkSpec, NodeConfig

MERGE_RTOL = 1e-9

NodeKey = tuple[str, int]  # (node id, class)
EdgeKey = tuple[int, Edge]  # (class, (upstream, downstream))
CutKey = tuple[int, str]  # (class, segment id)


class AnalysisContext:
    """Immutable per-run data: the spec, class graphs and cut forests."""

    def __init__(self, spec: NetworkSpec, cut_seed: int | None = None,
                 packetizer: bool = True, backend: str = "highs", aggregate: bool = True):
        self.spec = spec
        self.cut_seed = cut_seed
        self.packetizer = packetizer
        self.backend = backend
        self.aggregate = aggregate  # False: sum single-flow bursts instead
        self.graphs: dict[int, ClassGraph] = {}
        self.forests: dict[int, ForestDecomposition] = {}
        for c in range(spec.n_classes):
            g = build_class_graph(spec, c)
            if not g.flows:
                continue
            self.graphs[c] = g
            self.forests[c] = decompose_forest(g, compute_cutset(g, cut_seed))

    @property
    def classes(self) -> list[int]:
        return sorted(self.graphs)

    def node(self, v: str) -> NodeConfig:
        return self.spec.node(v)

    def lmax(self, v: str, c: int) -> float:
        return self.spec.node(v).max_packet[c]

    def packet_slack(self, v: str, c: int) -> float:
        """Extra burst of the packetized departures over the fluid ones."""
        return self.lmax(v, c) if self.packetizer else 0.0

    @cached_property
    def node_keys(self) -> list[NodeKey]:
        return [(v, c) for c in self.classes for v in self.graphs[c].vertices]

    @cached_property
    def edge_keys(self) -> list[EdgeKey]:
        return [(c, e) for c in self.classes for e in self.graphs[c].edges]

    @cached_property
    def cut_keys(self) -> list[CutKey]:
        return [(c, s.id) for c in self.classes for s in self.forests[c].transit_segments]

    def segment(self, key: CutKey) -> Segment:
        c, sid = key
        return next(s for s in self.forests[c].segments if s.id == sid)


@dataclass(frozen=True)
class Snapshot:
    """One consistent value of the state. Treat the dicts as read-only."""

    beta: dict[str, tuple[ConvexPWL, ...]]  # node -> per-class curves
    delay: dict[NodeKey, float]
    zcut: dict[CutKey, float]
    b_node: dict[NodeKey, float]
    b_edge: dict[EdgeKey, float]
    version: int = 0

    def beta_of(self, v: str, c: int) -> ConvexPWL:
        return self.beta[v][c]


@dataclass
class Delta:
    """Partial update; absent keys are left alone."""

    beta: dict[str, tuple[ConvexPWL, ...]] = field(default_factory=dict)
    delay: dict[NodeKey, float] = field(default_factory=dict)
    zcut: dict[CutKey, float] = field(default_factory=dict)
    b_node: dict[NodeKey, float] = field(default_factory=dict)
    b_edge: dict[EdgeKey, float] = field(default_factory=dict)


def improves(new: float, old: float, rtol: float = MERGE_RTOL) -> bool:
    """True when ``new`` is a strictly better (smaller) bound than ``old``."""
    if math.isnan(new):
        return False
    if not math.isfinite(old):
        return math.isfinite(new)
    return new < old - rtol * max(abs(old), 1e-300)


def merge(snap: Snapshot, delta: Delta) -> tuple[Snapshot, list[str]]:
    """Componentwise min-merge. Returns the new snapshot and the changed keys."""
    changed: list[str] = []
    parts = {}
    for name in ("delay", "zcut", "b_node", "b_edge"):
        old = getattr(snap, name)
        upd = getattr(delta, name)
        new = None
        for k, val in upd.items():
            if improves(val, old.get(k, INF)):
                if new is None:
                    new = dict(old)
                new[k] = val
                changed.append(f"{name}{k}")
        parts[name] = old if new is None else new
    beta = snap.beta
    for v, curves in delta.beta.items():
        old = beta[v]
        merged = list(old)
        hit = False
        for c, cand in enumerate(curves):
            if cand.improves_on(old[c]):
                merged[c] = max_convex(old[c], cand)
                hit = True
                changed.append(f"beta[{v},{c}]")
        if hit:
            if beta is snap.beta:
                beta = dict(beta)
            beta[v] = tuple(merged)
    if not changed:
        return snap, changed
    return Snapshot(beta, parts["delay"], parts["zcut"], parts["b_node"], parts["b_edge"],
                    snap.version + 1), changed


class SharedState:
    """Snapshot reads without locking, exclusive min-merge writes."""

    def __init__(self, snap: Snapshot):
        self._snap = snap
        self._lock = threading.Lock()

    def snapshot(self) -> Snapshot:
        return self._snap

    def write(self, delta: Delta) -> tuple[list[str], float, float, Snapshot, Snapshot]:
        """Merge under the lock; returns (changed keys, lock time, unlock time, pre, post)."""
        with self._lock:
            locked = time.perf_counter()
            pre = self._snap
            post, changed = merge(pre, delta)
            self._snap = post
            unlocked = time.perf_counter()
        return changed, locked, unlocked, pre, post


def degraded_betas(ctx: AnalysisContext) -> dict[str, tuple[ConvexPWL, ...]]:
    out = {}
    for nd in ctx.spec.nodes:
        out[nd.id] = tuple(
            degraded_curve(nd, c) if c in nd.classes else ConvexPWL()
            for c in range(ctx.spec.n_classes)
        )
    return out


def empty_snapshot(ctx: AnalysisContext) -> Snapshot:
    """Degraded curves and every bound unknown."""
    return Snapshot(
        degraded_betas(ctx),
        {k: INF for k in ctx.node_keys},
        {k: INF for k in ctx.cut_keys},
        {k: INF for k in ctx.node_keys},
        {k: INF for k in ctx.edge_keys},
    )


def relative_gap(a: Snapshot, b: Snapshot, grid_points: Iterable[float] | None = None) -> float:
    """Largest relative componentwise difference between two snapshots."""
    gap = 0.0
    for name in ("delay", "zcut", "b_node", "b_edge"):
        da, db = getattr(a, name), getattr(b, name)
        for k in set(da) | set(db):
            gap = max(gap, _rel(da.get(k, INF), db.get(k, INF)))
    for v in a.beta:
        for ca, cb in zip(a.beta[v], b.beta[v]):
            pts = list(grid_points) if grid_points is not None else sorted(set(ca.breakpoints() + cb.breakpoints()))
            horizon = max(pts + [1.0])
            for t in pts + [2 * horizon]:
                gap = max(gap, _rel(ca(t), cb(t)))
    return gap


def _rel(x: float, y: float) -> float:
    if x == y:
        return 0.0
    if not (math.isfinite(x) and math.isfinite(y)):
        return INF
    return abs(x - y) / max(abs(x), abs(y), 1e-12)


def with_version(snap: Snapshot, version: int) -> Snapshot:
    return replace(snap, version=version)
