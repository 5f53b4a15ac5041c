"""Polynomial-size linear programs over the cut forest of one class.

Every program is built on the sub-tree of ancestors of some root node.
FIFO equalities are substituted away: ``y[g][k]`` is the cumulative amount of
segment g that has arrived at its first node by the time ``t[v_g][k]``, and
by FIFO the same amount has crossed every later node of its path by the
matching time index. Programs are written in normalized units (times over
``tau``, data over ``rate_ref * tau``) so the solver sees numbers near one.

With the packetizer enabled, service constraints use the convex curve
lowered by one maximum packet, which relates packet arrivals at successive
nodes instead of bits leaving the link.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable

from .curves import INF, ConvexPWL
from .drr import nonconvex_part
from .graph import Segment, SubTree
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, Solution, export_lp, solve_lp, solve_milp_enum
from .state import AnalysisContext, Snapshot

Burst = float | int  # constant, or index of an LP variable when wrapped in VarRef


@dataclass(frozen=True)
class VarRef:
    index: int


class PlpError(RuntimeError):
    """A program that should always be feasible was not."""


@dataclass
class Scale:
    tau: float
    rate: float

    @property
    def data(self) -> float:
        return self.rate * self.tau


@dataclass
class Copy:
    """Indices of one instance of the core variables inside a program."""

    sub: SubTree
    t: dict[tuple[str, int], int]
    t0: int
    y: dict[tuple[str, int], int]
    service: dict[str, tuple[dict[int, float], dict[int, float]]] = field(default_factory=dict)


def _scale(ctx: AnalysisContext, snap: Snapshot, c: int, sub: SubTree) -> Scale:
    tau = 0.0
    rate = 0.0
    for v in sub.nodes:
        nd = ctx.node(v)
        rate = max(rate, nd.rate)
        tau = max(tau, nd.latency, ctx.lmax(v, c) / nd.rate)
        for p in snap.beta_of(v, c).pieces:
            tau = max(tau, p.latency)
    return Scale(tau if tau > 0 else 1.0, rate if rate > 0 else 1.0)


def service_curve(ctx: AnalysisContext, snap: Snapshot, v: str, c: int) -> ConvexPWL:
    beta = snap.beta_of(v, c)
    return beta.shift_down(ctx.lmax(v, c)) if ctx.packetizer else beta


def _add_core(p: LinearProgram, ctx: AnalysisContext, snap: Snapshot, c: int, sub: SubTree,
              sc: Scale, bursts: Callable[[Segment], float | VarRef], exclude: set[str], tag: str) -> Copy:
    """Time, arrival, service, delay, shaping and monotonicity constraints."""
    dp = sub.depth
    t = {}
    for v in sub.nodes:
        for k in range(dp[v] + 1):
            t[(v, k)] = p.var(f"{tag}t[{v},{k}]")
    t0 = p.var(f"{tag}t0", 0.0, 0.0)

    def t_of(u: str | None, k: int) -> int:
        return t0 if u is None else t[(u, k)]

    y = {}
    for s in sub.segments:
        last = dp[s.source]
        for k in range(last + 1):
            fixed = 0.0 if k == last else math.inf
            y[(s.id, k)] = p.var(f"{tag}y[{s.id},{k}]", 0.0, fixed)
    copy = Copy(sub, t, t0, y)

    for v in sub.nodes:
        u = sub.succ[v]
        for k in range(dp[v]):
            p.add({t[(v, k)]: 1.0, t[(v, k + 1)]: -1.0}, ">=", 0.0, f"{tag}order[{v},{k}]")
        for k in range(dp[v]):  # k <= dp(u) = dp(v) - 1
            p.add({t[(v, k)]: 1.0, t_of(u, k): -1.0}, "<=", 0.0, f"{tag}causal[{v},{k}]")

        # service
        segs = sub.segments_at(v)
        served: dict[int, float] = {}
        for s in segs:
            served[y[(s.id, dp[v] - 1)]] = served.get(y[(s.id, dp[v] - 1)], 0.0) + 1.0
            served[y[(s.id, dp[v])]] = served.get(y[(s.id, dp[v])], 0.0) - 1.0
        window = {t_of(u, dp[v] - 1): 1.0, t[(v, dp[v])]: -1.0}
        copy.service[v] = (served, window)
        p.add(served, ">=", 0.0, f"{tag}served[{v}]")
        for i, piece in enumerate(service_curve(ctx, snap, v, c).pieces):
            rho = piece.rate / sc.rate
            row = dict(served)
            for j, a in window.items():
                row[j] = row.get(j, 0.0) - rho * a
            p.add(row, ">=", -rho * piece.latency / sc.tau, f"{tag}service[{v},{i}]")

        # per-node delay
        d = snap.delay.get((v, c), INF)
        if math.isfinite(d):
            for k in range(dp[v]):
                p.add({t_of(u, k): 1.0, t[(v, k)]: -1.0}, "<=", d / sc.tau, f"{tag}delay[{v},{k}]")

        # line shaping on the tree edge leaving v
        if u is not None:
            carried = [s for s in sub.segments_on(v, u) if s.id not in exclude]
            if carried:
                link = ctx.node(v).rate / sc.rate
                off = ctx.lmax(v, c) / sc.data
                for k in range(dp[u] + 1):
                    for k2 in range(k + 1, dp[u] + 1):
                        row = {}
                        for s in carried:
                            row[y[(s.id, k)]] = row.get(y[(s.id, k)], 0.0) + 1.0
                            row[y[(s.id, k2)]] = row.get(y[(s.id, k2)], 0.0) - 1.0
                        row[t[(u, k)]] = row.get(t[(u, k)], 0.0) - link
                        row[t[(u, k2)]] = row.get(t[(u, k2)], 0.0) + link
                        p.add(row, "<=", off, f"{tag}shaping[{v},{k},{k2}]")

    for s in sub.segments:
        src = s.source
        last = dp[src]
        for k in range(last):
            p.add({y[(s.id, k)]: 1.0, y[(s.id, k + 1)]: -1.0}, ">=", 0.0, f"{tag}mono[{s.id},{k}]")
        b = bursts(s)
        r = s.rate / sc.rate
        for k in range(last + 1):
            for k2 in range(k + 1, last + 1):
                row = {y[(s.id, k)]: 1.0, y[(s.id, k2)]: -1.0, t[(src, k)]: -r, t[(src, k2)]: r}
                if isinstance(b, VarRef):
                    row[b.index] = -1.0
                    p.add(row, "<=", 0.0, f"{tag}arrival[{s.id},{k},{k2}]")
                elif math.isfinite(b):
                    p.add(row, "<=", b / sc.data, f"{tag}arrival[{s.id},{k},{k2}]")
    return copy


def _add_backlog_terms(p: LinearProgram, copy: Copy, sc: Scale, seg: Segment,
                       burst: float | VarRef, tag: str) -> dict[int, float] | None:
    """Extra arrival constraints tying the source curve to the end time.

    Returns the objective terms of the segment, or None when its burst is
    unbounded (the backlog is then unbounded as well).
    """
    if not isinstance(burst, VarRef) and not math.isfinite(burst):
        return None
    dp = copy.sub.depth
    src = seg.source
    Y = p.var(f"{tag}Y[{seg.id}]", 0.0)
    r = seg.rate / sc.rate
    for k in range(dp[src] + 1):
        row = {Y: 1.0, copy.y[(seg.id, k)]: -1.0, copy.t0: -r, copy.t[(src, k)]: r}
        if isinstance(burst, VarRef):
            row[burst.index] = -1.0
            p.add(row, "<=", 0.0, f"{tag}horizon[{seg.id},{k}]")
        else:
            p.add(row, "<=", burst / sc.data, f"{tag}horizon[{seg.id},{k}]")
    return {Y: 1.0, copy.y[(seg.id, 0)]: -1.0}


def _burst_table(ctx: AnalysisContext, snap: Snapshot, c: int) -> Callable[[Segment], float]:
    def burst(s: Segment) -> float:
        if s.fresh:
            return s.burst
        return snap.zcut.get((c, s.id), INF)
    return burst


def _solve(p: LinearProgram, ctx: AnalysisContext, emit_dir: str | None) -> Solution:
    if emit_dir:
        os.makedirs(emit_dir, exist_ok=True)
        with open(os.path.join(emit_dir, f"{_file_name(p.name)}.lp"), "w", encoding="utf-8") as fh:
            fh.write(export_lp(p))
    sol = solve_milp_enum(p, ctx.backend) if p.binaries else solve_lp(p, ctx.backend)
    if sol.status == INFEASIBLE:
        raise PlpError(f"program {p.name} is infeasible")
    if sol.status not in (OPTIMAL, UNBOUNDED):
        raise PlpError(f"program {p.name}: solver status {sol.status}")
    return sol


def _file_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def _segment(ctx: AnalysisContext, c: int, seg_id: str) -> Segment:
    return next(s for s in ctx.forests[c].segments if s.id == seg_id)


def _in_sub(sub: SubTree, seg_id: str) -> Segment:
    return next(s for s in sub.segments if s.id == seg_id)


# ------------------------------------------------------------------ delay

def delay_program(ctx: AnalysisContext, snap: Snapshot, c: int, seg_id: str,
                  nonconvex: bool = False) -> tuple[LinearProgram, Scale]:
    seg = _segment(ctx, c, seg_id)
    sub = ctx.forests[c].subtree(seg.sink)
    sc = _scale(ctx, snap, c, sub)
    p = LinearProgram(name=f"{'iplp' if nonconvex else 'plp'}_delay_c{c}_{seg_id}")
    copy = _add_core(p, ctx, snap, c, sub, sc, _burst_table(ctx, snap, c), set(), "")
    if nonconvex:
        for v in seg.path:
            nc = nonconvex_part(ctx.node(v), c)
            if nc is None:
                continue
            cap, latency = nc.cap, nc.latency
            if ctx.packetizer:
                latency += ctx.lmax(v, c) / nc.rate
                cap -= ctx.lmax(v, c)
            if cap <= 0:
                continue
            b = p.binary(f"b[{v}]")
            served, window = copy.service[v]
            rho = nc.rate / sc.rate
            row = dict(served)
            for j, a in window.items():
                row[j] = row.get(j, 0.0) - rho * a
            p.add(row, ">=", -rho * latency / sc.tau, f"nc_linear[{v}]", condition=(b, 0))
            p.add(served, "<=", cap / sc.data, f"nc_below_cap[{v}]", condition=(b, 0))
            p.add(served, ">=", cap / sc.data, f"nc_above_cap[{v}]", condition=(b, 1))
    p.maximize({copy.t0: 1.0, copy.t[(seg.source, 0)]: -1.0})
    return p, sc


def plp_delay(ctx: AnalysisContext, snap: Snapshot, c: int, seg_id: str, emit_dir: str | None = None) -> float:
    """Delay bound of one segment from its first node to its sink."""
    p, sc = delay_program(ctx, snap, c, seg_id)
    return _solve(p, ctx, emit_dir).value * sc.tau


def iplp_delay(ctx: AnalysisContext, snap: Snapshot, c: int, seg_id: str, emit_dir: str | None = None) -> float:
    """As :func:`plp_delay`, also using the first-round cap of each DRR port on the path."""
    p, sc = delay_program(ctx, snap, c, seg_id, nonconvex=True)
    return _solve(p, ctx, emit_dir).value * sc.tau


def end_to_end(ctx: AnalysisContext, snap: Snapshot, flow_id: str, nonconvex: bool = True,
               emit_dir: str | None = None) -> float:
    """Sum of segment delay bounds along the flow."""
    f = ctx.spec.flow(flow_id)
    solver = iplp_delay if nonconvex else plp_delay
    total = 0.0
    for s in ctx.forests[f.cls].segments_of(flow_id):
        total += solver(ctx, snap, f.cls, s.id, emit_dir)
        if not math.isfinite(total):
            return INF
    return total


# ---------------------------------------------------------------- backlog

def backlog_program(ctx: AnalysisContext, snap: Snapshot, c: int, root: str,
                    seg_ids: list[str], name: str) -> tuple[LinearProgram, Scale] | None:
    """Aggregate burstiness of ``seg_ids`` leaving ``root``; None if trivially unbounded."""
    sub = ctx.forests[c].subtree(root)
    sc = _scale(ctx, snap, c, sub)
    p = LinearProgram(name=name)
    bursts = _burst_table(ctx, snap, c)
    copy = _add_core(p, ctx, snap, c, sub, sc, bursts, set(seg_ids), "")
    objective: dict[int, float] = {}
    for sid in seg_ids:
        seg = _in_sub(sub, sid)
        terms = _add_backlog_terms(p, copy, sc, seg, bursts(seg), "")
        if terms is None:
            return None
        for j, a in terms.items():
            objective[j] = objective.get(j, 0.0) + a
    p.maximize(objective)
    return p, sc


def _backlog(ctx, snap, c, root, seg_ids, name, emit_dir) -> float:
    if not seg_ids:
        return 0.0
    built = backlog_program(ctx, snap, c, root, seg_ids, name)
    if built is None:
        return INF
    p, sc = built
    return _solve(p, ctx, emit_dir).value * sc.data


def plp_backlog_single(ctx: AnalysisContext, snap: Snapshot, c: int, seg_id: str, root: str | None = None,
                       emit_dir: str | None = None) -> float:
    """Burst of one segment at the output of ``root`` (default: its sink)."""
    seg = _segment(ctx, c, seg_id)
    root = root or seg.sink
    return _backlog(ctx, snap, c, root, [seg_id], f"backlog_c{c}_{seg_id}_at_{root}", emit_dir)


def plp_backlog_aggregate(ctx: AnalysisContext, snap: Snapshot, c: int, root: str, seg_ids: list[str],
                          emit_dir: str | None = None, name: str | None = None) -> float:
    """Aggregate burstiness of several segments at the output of ``root``."""
    return _backlog(ctx, snap, c, root, list(seg_ids), name or f"backlog_c{c}_{root}_{len(seg_ids)}", emit_dir)


def segments_at_node(ctx: AnalysisContext, c: int, v: str) -> list[str]:
    return [s.id for s in ctx.forests[c].subtree(v).segments_at(v)]


def segments_on_edge(ctx: AnalysisContext, c: int, edge: tuple[str, str]) -> list[str]:
    """Segments that leave ``w`` towards ``v``, whether the edge is cut or kept."""
    w, v = edge
    out = []
    for s in ctx.forests[c].subtree(w).segments_at(w):
        path = ctx.spec.flow(s.flow).path
        i = path.index(w)
        if i + 1 < len(path) and path[i + 1] == v:
            out.append(s.id)
    return out


def backlog_node(ctx: AnalysisContext, snap: Snapshot, v: str, c: int, emit_dir: str | None = None) -> float:
    """Burstiness of all class-c traffic leaving port v."""
    if not ctx.aggregate:
        return _sum_of_singles(ctx, snap, c, v, segments_at_node(ctx, c, v), emit_dir)
    return plp_backlog_aggregate(ctx, snap, c, v, segments_at_node(ctx, c, v), emit_dir,
                                 f"backlog_node_c{c}_{v}")


def backlog_edge(ctx: AnalysisContext, snap: Snapshot, c: int, edge: tuple[str, str],
                 emit_dir: str | None = None) -> float:
    """Burstiness of class-c traffic on the link from ``edge[0]`` to ``edge[1]``."""
    if not ctx.aggregate:
        return _sum_of_singles(ctx, snap, c, edge[0], segments_on_edge(ctx, c, edge), emit_dir)
    return plp_backlog_aggregate(ctx, snap, c, edge[0], segments_on_edge(ctx, c, edge), emit_dir,
                                 f"backlog_edge_c{c}_{edge[0]}_{edge[1]}")


def _sum_of_singles(ctx, snap, c, root, seg_ids, emit_dir) -> float:
    total = 0.0
    for sid in seg_ids:
        total += plp_backlog_single(ctx, snap, c, sid, root, emit_dir)
    return total


# ---------------------------------------------------------------- fixpoint

def fp_program(ctx: AnalysisContext, snap: Snapshot, c: int) -> tuple[LinearProgram, dict[str, int], float]:
    """One program whose maximal x values bound every cut burst of class c."""
    fd = ctx.forests[c]
    transit = list(fd.transit_segments)
    p = LinearProgram(name=f"fp_plp_c{c}")
    # one data unit shared by every copy
    ref_rate = max(ctx.node(v).rate for v in fd.graph.vertices)
    scales = {s.id: _scale(ctx, snap, c, fd.subtree(fd.previous(s).sink)) for s in transit}
    data = max((sc.data for sc in scales.values()), default=1.0)
    x = {s.id: p.var(f"x[{s.id}]", 0.0) for s in transit}

    def bursts(s: Segment) -> float | VarRef:
        return VarRef(x[s.id]) if not s.fresh else s.burst

    for n, g in enumerate(transit):
        prev = fd.previous(g)
        sub = fd.subtree(prev.sink)
        sc = Scale(data / ref_rate, ref_rate)
        tag = f"k{n}_"
        copy = _add_core(p, ctx, snap, c, sub, sc, bursts, {prev.id}, tag)
        terms = _add_backlog_terms(p, copy, sc, _in_sub(sub, prev.id), bursts(prev), tag)
        if terms is None:
            continue  # x stays unconstrained here; the program is unbounded
        row = {x[g.id]: 1.0}
        for j, a in terms.items():
            row[j] = row.get(j, 0.0) - a
        p.add(row, "<=", 0.0, f"{tag}x_bound[{g.id}]")
    p.maximize({j: 1.0 for j in x.values()})
    return p, x, data


def fp_plp(ctx: AnalysisContext, snap: Snapshot, c: int, emit_dir: str | None = None) -> dict[str, float]:
    """Cut bursts of class c, all infinite when the program is unbounded."""
    fd = ctx.forests[c]
    if not fd.transit_segments:
        return {}
    p, x, data = fp_program(ctx, snap, c)
    sol = _solve(p, ctx, emit_dir)
    if sol.status == UNBOUNDED:
        return {sid: INF for sid in x}
    return {sid: float(sol.x[j]) * data for sid, j in x.items()}
