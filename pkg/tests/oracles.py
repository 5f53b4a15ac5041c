"""Brute-force reference computations shared by the tests.

Everything here works on dense grids or by enumeration and deliberately does
not reuse the closed forms of the package.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def grid(upper: float, n: int = 20001) -> np.ndarray:
    return np.linspace(0.0, upper, n)


def hdev_grid(alpha, beta, upper: float, n: int = 20001) -> float:
    """sup_t inf{d >= 0 : alpha(t) <= beta(t + d)} on a grid (beta evaluated on a finer grid)."""
    ts = np.concatenate(([1e-12], grid(upper, n)[1:]))
    fine = grid(4 * upper, 8 * n)
    bvals = np.array([beta(float(s)) for s in fine])
    worst = 0.0
    for t in ts:
        a = alpha(float(t))
        idx = np.searchsorted(bvals, a - 1e-12, side="left")
        if idx >= len(fine):
            return math.inf
        worst = max(worst, fine[idx] - t)
    return worst


def deconv_grid(alpha, beta, t: float, upper: float, n: int = 40001) -> float:
    """sup_{s >= 0} alpha(t + s) - beta(s) on a grid."""
    return max(alpha(t + float(s)) - beta(float(s)) for s in grid(upper, n))


def closure_grid(f, ts: np.ndarray) -> np.ndarray:
    """Non-decreasing, non-negative closure of f sampled on ts."""
    vals = np.maximum(np.array([f(float(t)) for t in ts]), 0.0)
    return np.maximum.accumulate(vals)


def lp_vertex_enumeration(c, A_ub, b_ub, bounds=None, box=1e6):
    """Maximise c.x subject to A_ub x <= b_ub by visiting every vertex.

    Returns ("optimal", value), ("unbounded", None) or ("infeasible", None).
    Every variable is clipped to [-box, box] so the polytope always has
    vertices; the program is unbounded when widening the box tenfold raises
    the optimum.
    """
    small = _box_vertex_max(c, A_ub, b_ub, bounds, box)
    if small is None:
        return "infeasible", None
    large = _box_vertex_max(c, A_ub, b_ub, bounds, 10 * box)
    if large > small + 1e-6 * (1 + abs(small)):
        return "unbounded", None
    return "optimal", small


def _box_vertex_max(c, A_ub, b_ub, bounds, box):
    c = np.asarray(c, float)
    n = len(c)
    A = np.asarray(A_ub, float).reshape(-1, n)
    b = np.asarray(b_ub, float)
    rows = [(A[i], b[i]) for i in range(len(b))]
    for j in range(n):
        lo, hi = (None, None) if bounds is None else bounds[j]
        lo = -box if lo is None or lo < -box else lo
        hi = box if hi is None or hi > box else hi
        e = np.zeros(n)
        e[j] = 1.0
        rows.append((-e, -lo))
        rows.append((e, hi))
    G = np.array([r[0] for r in rows])
    h = np.array([r[1] for r in rows])
    best = None
    for idx in itertools.combinations(range(len(rows)), n):
        M = G[list(idx)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(idx)])
        if np.all(G @ x <= h + 1e-7 * (1 + np.abs(h)) + 1e-11 * box):
            val = float(c @ x)
            if best is None or val > best:
                best = val
    return best


def served_breakpoints(service, a: float, b: float) -> list[tuple[float, float]]:
    """Cumulative bits served in [a, b] as (time, bits) breakpoints.

    ``service`` lists (enqueue, start, end, size) records of one queue.
    """
    pts = {a, b}
    for _, s, e, _ in service:
        for x in (s, e):
            if a <= x <= b:
                pts.add(x)
    out = []
    for x in sorted(pts):
        bits = 0.0
        for _, s, e, size in service:
            if x >= e:
                bits += size
            elif x > s:
                bits += size * (x - s) / (e - s)
        out.append((x, bits))
    return out


def backlogged_periods(service) -> list[tuple[float, float]]:
    """Maximal intervals during which the queue holds at least one bit."""
    spans = sorted((q, e) for q, _, e, _ in service)
    out: list[list[float]] = []
    for q, e in spans:
        if out and q <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([q, e])
    return [(a, b) for a, b in out]


def strict_service_deficit(service, curve) -> float:
    """Largest  curve(t - s) - served(s, t)  over windows inside a backlogged period."""
    worst = -math.inf
    for a, b in backlogged_periods(service):
        pts = served_breakpoints(service, a, b)
        for i, (s, bs) in enumerate(pts):
            for t, bt in pts[i + 1:]:
                worst = max(worst, curve(t - s) - (bt - bs))
    return worst


def drr_micro_trajectories(max_packets: int = 6, times=(0.0, 0.5, 1.0, 1.5, 2.0, 3.0)):
    """Every multiset of unit packets over two classes and a small time grid."""
    items = [(t, c) for t in times for c in (0, 1)]
    for n in range(1, max_packets + 1):
        yield from itertools.combinations_with_replacement(items, n)
