"""Total flow analysis per class and the initial phase that alternates it
with service-curve refinement.

Burst bookkeeping: ``z[(flow, i)]`` is the burst of the flow at the input of
the i-th node of its path; ``z[(flow, len(path))]`` is its burst after the
last node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import networkx as nx

from .curves import INF, ConcavePWL, ConvexPWL, TokenBucket, concave_sum, h_dev, max_convex
from .drr import input_arrival_refine
from .graph import ClassGraph, Edge
from .state import AnalysisContext, Snapshot, degraded_betas

TFA_RTOL = 1e-9
TFA_MAX_SWEEPS = 5000
DIVERGENCE_BURST = 1e18
INFLATE_RTOL = 1e-6
OUTER_RTOL = 1e-4
OUTER_MAX_ITER = 30

Bursts = dict[tuple[str, int], float]


def propagate_burst(rate: float, burst: float, delay: float) -> float:
    """Burst of a token-bucket flow after a node with delay bound ``delay``."""
    if not (math.isfinite(burst) and math.isfinite(delay)):
        return INF
    return burst + rate * delay


def edge_rate(g: ClassGraph, e: Edge) -> float:
    ids = set(g.edge_flows[e])
    return sum(f.rate for f in g.flows if f.id in ids)


def node_arrival(ctx: AnalysisContext, c: int, v: str, edge_bursts: dict[Edge, float]) -> ConcavePWL:
    """Arrival curve of class c at v: shaped input links plus fresh sources."""
    g = ctx.graphs[c]
    parts = []
    for e in g.in_edges(v):
        w = e[0]
        pieces = [TokenBucket(edge_rate(g, e), edge_bursts[e]),
                  TokenBucket(ctx.node(w).rate, ctx.lmax(w, c))]
        parts.append(ConcavePWL.of(pieces))
    for f in g.fresh_at(v):
        parts.append(ConcavePWL.of([f.arrival]))
    return concave_sum(parts)


def per_node_delay(alpha: ConcavePWL, beta: ConvexPWL) -> float:
    if alpha.is_zero:
        return 0.0
    return h_dev(alpha, beta)


def edge_bursts_from(g: ClassGraph, z: Bursts) -> dict[Edge, float]:
    out: dict[Edge, float] = {e: 0.0 for e in g.edges}
    for f in g.flows:
        for i, e in enumerate(zip(f.path, f.path[1:])):
            out[e] += z[(f.id, i + 1)]
    return out


@dataclass
class TfaResult:
    delay: dict[str, float]
    z: Bursts
    sweeps: int = 0
    unstable: list[str] = field(default_factory=list)


def generic_tfa(ctx: AnalysisContext, c: int, beta: dict[str, tuple[ConvexPWL, ...]]) -> TfaResult:
    """Per-node delays and per-flow bursts of class c for fixed service curves.

    Strongly connected parts of the class graph are solved in topological
    order. Inside a cycle the burst map is iterated upwards from the source
    bursts; the limit is inflated slightly and accepted only when the map
    sends it below itself, which makes it a valid bound. Anything that fails
    this test, or grows past ``DIVERGENCE_BURST``, is unbounded, along with
    everything downstream.
    """
    g = ctx.graphs[c]
    z: Bursts = {}
    for f in g.flows:
        z[(f.id, 0)] = f.burst
    delay: dict[str, float] = {}
    dag = nx.condensation(g.to_networkx())
    result = TfaResult(delay, z)

    def upstream_of(scc: set[str]) -> list[tuple[str, int]]:
        # burst entries fed by a node of the component
        return [(f.id, i + 1) for f in g.flows for i, v in enumerate(f.path) if v in scc]

    def evaluate(scc: list[str], x: Bursts) -> tuple[Bursts, dict[str, float]]:
        local = dict(z)
        local.update(x)
        eb = edge_bursts_from_partial(g, local)
        dl = {v: per_node_delay(node_arrival(ctx, c, v, eb_for(g, v, eb)), beta[v][c]) for v in scc}
        out = {}
        for fid, j in x:
            f = flow_of[fid]
            v = f.path[j - 1]
            out[(fid, j)] = propagate_burst(f.rate, local[(fid, j - 1)], dl[v])
        return out, dl

    flow_of = {f.id: f for f in g.flows}
    for comp in nx.topological_sort(dag):
        scc = sorted(dag.nodes[comp]["members"])
        scc_set = set(scc)
        keys = upstream_of(scc_set)
        cyclic = len(scc) > 1
        if not cyclic:
            v = scc[0]
            eb = edge_bursts_from_partial(g, z)
            dv = per_node_delay(node_arrival(ctx, c, v, eb_for(g, v, eb)), beta[v][c])
            delay[v] = dv
            for fid, j in keys:
                f = flow_of[fid]
                z[(fid, j)] = propagate_burst(f.rate, z[(fid, j - 1)], dv)
            result.sweeps += 1
            continue
        x = {k: 0.0 for k in keys}
        accepted = None
        prev_step = None
        for sweep in range(TFA_MAX_SWEEPS):
            result.sweeps += 1
            fx, _ = evaluate(scc, x)
            if any(not math.isfinite(val) or val > DIVERGENCE_BURST for val in fx.values()):
                break
            step = max((abs(fx[k] - x[k]) / max(abs(fx[k]), 1e-300) for k in keys), default=0.0)
            x_next = fx
            # geometric extrapolation of the increasing sequence
            if prev_step is not None and 0 < step < prev_step and sweep % 10 == 9:
                ratio = step / prev_step
                x_next = {k: fx[k] + (fx[k] - x[k]) * ratio / (1 - ratio) for k in keys}
            candidate = _inflate(fx if step <= TFA_RTOL else x_next)
            if step <= TFA_RTOL or x_next is not fx:
                fc, dc = evaluate(scc, candidate)
                if all(fc[k] <= candidate[k] for k in keys):
                    accepted = (fc, dc)
                    break
            prev_step = step
            x = fx
        if accepted is None:
            result.unstable.extend(scc)
            for v in scc:
                delay[v] = INF
            for k in keys:
                z[k] = INF
        else:
            fc, dc = accepted
            delay.update(dc)
            z.update(fc)
    # nodes downstream of an unbounded burst inherit it through h_dev
    return result


def edge_bursts_from_partial(g: ClassGraph, z: Bursts) -> dict[Edge, float]:
    out: dict[Edge, float] = {}
    for f in g.flows:
        for i, e in enumerate(zip(f.path, f.path[1:])):
            val = z.get((f.id, i + 1))
            if val is None:
                continue
            out[e] = out.get(e, 0.0) + val
    return out


def eb_for(g: ClassGraph, v: str, eb: dict[Edge, float]) -> dict[Edge, float]:
    return {e: eb.get(e, INF) for e in g.in_edges(v)}


def _inflate(x: Bursts) -> Bursts:
    return {k: val * (1 + INFLATE_RTOL) + 1e-9 for k, val in x.items()}


def class_arrivals(ctx: AnalysisContext, c: int, z: Bursts) -> dict[str, ConcavePWL]:
    g = ctx.graphs[c]
    eb = edge_bursts_from(g, z)
    return {v: node_arrival(ctx, c, v, eb_for(g, v, eb)) for v in g.vertices}


@dataclass
class InitialPhase:
    snapshot: Snapshot
    delay: dict[tuple[str, int], float]
    z: dict[int, Bursts]
    iterations: int
    history: list[Snapshot]
    unstable: dict[int, list[str]]


def initial_phase(ctx: AnalysisContext, max_iter: int = OUTER_MAX_ITER, rtol: float = OUTER_RTOL) -> InitialPhase:
    """TFA alternated with input-arrival service refinement until delays settle."""
    beta = degraded_betas(ctx)
    delay: dict[tuple[str, int], float] = {k: INF for k in ctx.node_keys}
    z: dict[int, Bursts] = {}
    history: list[Snapshot] = []
    unstable: dict[int, list[str]] = {}
    it = 0
    for it in range(1, max_iter + 1):
        previous = dict(delay)
        arrivals: dict[str, list[ConcavePWL]] = {nd.id: [ConcavePWL.zero()] * ctx.spec.n_classes for nd in ctx.spec.nodes}
        for c in ctx.classes:
            res = generic_tfa(ctx, c, beta)
            unstable[c] = res.unstable
            zc = z.setdefault(c, {})
            for k, val in res.z.items():
                if k not in zc or val < zc[k]:
                    zc[k] = val
            for v, dv in res.delay.items():
                if dv < delay[(v, c)]:
                    delay[(v, c)] = dv
            for v, alpha in class_arrivals(ctx, c, zc).items():
                arrivals[v] = arrivals[v][:c] + [alpha] + arrivals[v][c + 1:]
        new_beta = {}
        for nd in ctx.spec.nodes:
            refined = input_arrival_refine(nd, arrivals[nd.id])
            new_beta[nd.id] = tuple(max_convex(old, cand) for old, cand in zip(beta[nd.id], refined))
        beta = new_beta
        snap = build_snapshot(ctx, beta, delay, z)
        history.append(snap)
        gain = max((_gain(previous[k], delay[k]) for k in delay), default=0.0)
        if it > 1 and gain < rtol:
            break
    return InitialPhase(history[-1], delay, z, it, history, unstable)


def _gain(old: float, new: float) -> float:
    if not math.isfinite(old):
        return 1.0 if math.isfinite(new) else 0.0
    if old <= 0:
        return 0.0
    return (old - new) / old


def build_snapshot(ctx: AnalysisContext, beta, delay, z: dict[int, Bursts]) -> Snapshot:
    """Derive cut, node and edge bursts from per-flow TFA bursts."""
    zcut, b_node, b_edge = {}, {}, {}
    for c in ctx.classes:
        g, fd, zc = ctx.graphs[c], ctx.forests[c], z.get(c, {})
        for s in fd.transit_segments:
            f = next(fl for fl in g.flows if fl.id == s.flow)
            zcut[(c, s.id)] = zc.get((s.flow, f.path.index(s.source)), INF)
        for e, val in edge_bursts_from(g, _complete(g, zc)).items():
            b_edge[(c, e)] = val
        for v in g.vertices:
            total = 0.0
            for f in g.flows_at(v):
                total += zc.get((f.id, f.path.index(v) + 1), INF)
            b_node[(v, c)] = total
    return Snapshot(dict(beta), dict(delay), zcut, b_node, b_edge)


def _complete(g: ClassGraph, zc: Bursts) -> Bursts:
    full = {}
    for f in g.flows:
        for i in range(len(f.path) + 1):
            full[(f.id, i)] = zc.get((f.id, i), INF)
    return full


def tfa_end_to_end(ctx: AnalysisContext, delay: dict[tuple[str, int], float]) -> dict[str, float]:
    """Sum of per-node delay bounds along each flow path."""
    out = {}
    for f in ctx.spec.flows:
        out[f.id] = sum(delay[(v, f.cls)] for v in f.path)
    return out
