"""Strict service curves offered by a DRR port to each of its classes.

All curves here include the port's aggregate latency, so they compose the
per-class DRR curve with ``B = beta_{R,T}``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

from .curves import (
    INF,
    CappedRateLatency,
    ConcavePWL,
    ConvexPWL,
    RateLatency,
    TokenBucket,
    compose_through_aggregate,
    deconvolve,
    h_dev,
    max_convex,
)
from .model import NodeConfig

MAX_CLASSES = 8
INPUT_REFINE_RTOL = 1e-4
INPUT_REFINE_MAX_ITER = 20


@dataclass(frozen=True)
class DrrCurveParams:
    rate_max: float
    latency_max: float
    rate_min: float
    latency_min: float
    quantum_total: float


def curve_params(node: NodeConfig, c: int, competitors: Sequence[int] | None = None) -> DrrCurveParams:
    """Rates (as fractions of the port rate) and latencies (in bits of
    aggregate service) of the two pieces, for the competitor set ``J``.

    ``competitors=None`` means every other class configured on the port.
    """
    if competitors is None:
        competitors = [k for k in node.classes if k != c]
    q = node.quanta
    dmax = node.residual_deficit
    q_tot = q[c] + sum(q[k] for k in competitors)
    rate_max = q[c] / q_tot
    latency_max = sum(q[k] + dmax(k) + q[k] / q[c] * dmax(c) for k in competitors)
    denom = q_tot - dmax(c)
    rate_min = (q[c] - dmax(c)) / denom if denom > 0 else 0.0
    latency_min = sum(q[k] + dmax(k) for k in competitors)
    return DrrCurveParams(rate_max, latency_max, rate_min, max(latency_min, 0.0), q_tot)


def gamma_convex(node: NodeConfig, c: int, competitors: Sequence[int] | None = None) -> ConvexPWL:
    """Service of class c as a function of the aggregate service (both in bits)."""
    p = curve_params(node, c, competitors)
    pieces = [RateLatency(p.rate_max, max(p.latency_max, 0.0))]
    if p.rate_min > 0:
        pieces.append(RateLatency(p.rate_min, p.latency_min))
    return ConvexPWL.of(pieces)


def degraded_curve(node: NodeConfig, c: int) -> ConvexPWL:
    """Service curve that assumes nothing about the other classes."""
    return compose_through_aggregate(gamma_convex(node, c), node.aggregate, [])


def nonconvex_part(node: NodeConfig, c: int) -> CappedRateLatency | None:
    """First-round curve min(beta_{R, T + T_min / R}, Q_c - d_max); None when the cap is not positive."""
    p = curve_params(node, c)
    cap = node.quanta[c] - node.residual_deficit(c)
    if cap <= 0:
        return None
    return CappedRateLatency(node.rate, node.latency + p.latency_min / node.rate, cap)


def feasible_subsets(node: NodeConfig, c: int, bursts: Sequence[float]) -> list[tuple[int, ...]]:
    """Competitor sets J whose complement only has classes with finite bursts."""
    others = [k for k in node.classes if k != c]
    if len(others) + 1 > MAX_CLASSES:
        raise ValueError(f"subset enumeration is capped at {MAX_CLASSES} classes per port")
    out = []
    for size in range(len(others) + 1):
        for J in itertools.combinations(others, size):
            complement = [k for k in others if k not in J]
            if all(math.isfinite(bursts[k]) for k in complement):
                out.append(J)
    return out


def output_burst_refine(
    node: NodeConfig,
    beta_old: Sequence[ConvexPWL],
    bursts: Sequence[float],
    rates: Sequence[float],
) -> list[ConvexPWL]:
    """Improve every class curve from token-bucket bounds on the other classes' outputs.

    ``bursts[k]`` and ``rates[k]`` describe the output of class k at this port
    (``inf`` when unknown). Classes not configured on the port keep their input.
    """
    out = list(beta_old)
    others_all = node.classes
    for c in others_all:
        best = beta_old[c]
        others = [k for k in others_all if k != c]
        for J in feasible_subsets(node, c, bursts):
            leftover = [TokenBucket(rates[k], bursts[k]) for k in others if k not in J]
            cand = compose_through_aggregate(gamma_convex(node, c, J), node.aggregate, leftover)
            best = max_convex(best, cand)
        out[c] = best
    return out


def input_arrival_refine(
    node: NodeConfig,
    arrivals: Sequence[ConcavePWL],
    start: Sequence[ConvexPWL] | None = None,
    rtol: float = INPUT_REFINE_RTOL,
    max_iter: int = INPUT_REFINE_MAX_ITER,
) -> list[ConvexPWL]:
    """Iterate output-curve deconvolution and :func:`output_burst_refine`.

    ``arrivals[k]`` bounds the input of class k at this port. The sequence of
    curves is pointwise non-decreasing; iteration stops when no class delay
    bound improves by more than ``rtol`` (relative).
    """
    n = len(node.quanta)
    if start is None:
        beta = [degraded_curve(node, c) if c in node.classes else ConvexPWL() for c in range(n)]
    else:
        beta = list(start)
    delays = [_delay(arrivals[c], beta[c]) for c in range(n)]
    for _ in range(max_iter):
        out_curves = [
            deconvolve(arrivals[c].long_term, beta[c]) if c in node.classes else TokenBucket(0.0, 0.0)
            for c in range(n)
        ]
        new = output_burst_refine(
            node, beta, [tb.burst for tb in out_curves], [tb.rate for tb in out_curves]
        )
        new_delays = [_delay(arrivals[c], new[c]) for c in range(n)]
        improved = any(
            _relative_gain(old, cur) > rtol for old, cur in zip(delays, new_delays)
        )
        beta, delays = new, new_delays
        if not improved:
            break
    return beta


def _delay(alpha: ConcavePWL, beta: ConvexPWL) -> float:
    if alpha.is_zero:
        return 0.0
    return h_dev(alpha, beta)


def _relative_gain(old: float, new: float) -> float:
    if not math.isfinite(old):
        return INF if math.isfinite(new) else 0.0
    if old <= 0:
        return 0.0
    return (old - new) / old
