"""Min-plus curves used by the analysis.

Only closed forms are implemented: rate-latency service curves, token-bucket
arrival curves, their max/min envelopes, and the first-round capped curve of
DRR. Units are bits and seconds throughout; ``math.inf`` is a legal burst or
delay and means "no finite bound known".
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

INF = math.inf

# relative tolerance used when pruning dominated pieces
PRUNE_RTOL = 1e-12
# relative tolerance used when comparing curves for equality / improvement
CURVE_RTOL = 1e-9


@dataclass(frozen=True)
class RateLatency:
    """beta_{R,T}(t) = R * max(t - T, 0)."""

    rate: float
    latency: float

    def __post_init__(self):
        if self.rate < 0 or self.latency < 0:
            raise ValueError(f"negative rate-latency parameters: {self}")

    def __call__(self, t: float) -> float:
        return self.rate * max(t - self.latency, 0.0)


@dataclass(frozen=True)
class TokenBucket:
    """gamma_{r,b}(t) = r*t + b for t > 0 and 0 at t = 0."""

    rate: float
    burst: float

    def __post_init__(self):
        if self.rate < 0 or self.burst < 0:
            raise ValueError(f"negative token-bucket parameters: {self}")

    @property
    def finite(self) -> bool:
        return math.isfinite(self.burst)

    def __call__(self, t: float) -> float:
        if t <= 0:
            return 0.0
        return self.rate * t + self.burst


@dataclass(frozen=True)
class CappedRateLatency:
    """min(beta_{R,T}(t), cap): the first DRR round as a non-convex curve."""

    rate: float
    latency: float
    cap: float

    def __post_init__(self):
        if self.rate < 0 or self.latency < 0:
            raise ValueError(f"negative parameters: {self}")

    @property
    def inner(self) -> RateLatency:
        return RateLatency(self.rate, self.latency)

    def __call__(self, t: float) -> float:
        return min(self.rate * max(t - self.latency, 0.0), self.cap)


@dataclass(frozen=True)
class ConvexPWL:
    """Maximum of rate-latency pieces (and of 0).

    ``pieces`` is kept sorted by strictly increasing rate and latency with
    dominated pieces removed; build instances through :meth:`of`. An empty
    tuple is the zero curve.
    """

    pieces: tuple[RateLatency, ...] = ()

    @classmethod
    def of(cls, pieces: Iterable[RateLatency]) -> "ConvexPWL":
        return cls(_upper_envelope(pieces))

    @classmethod
    def rate_latency(cls, rate: float, latency: float) -> "ConvexPWL":
        return cls.of([RateLatency(rate, latency)])

    def __call__(self, t: float) -> float:
        v = 0.0
        for p in self.pieces:
            v = max(v, p.rate * (t - p.latency))
        return v

    @property
    def is_zero(self) -> bool:
        return not self.pieces

    @property
    def final_rate(self) -> float:
        return self.pieces[-1].rate if self.pieces else 0.0

    def breakpoints(self) -> list[float]:
        """Abscissae where the slope changes, in increasing order."""
        if not self.pieces:
            return []
        out = [self.pieces[0].latency]
        for a, b in zip(self.pieces, self.pieces[1:]):
            out.append(_crossing(a, b))
        return out

    def inverse(self, y: float) -> float:
        """Smallest t with value >= y, for y > 0 (limit from above at y = 0)."""
        if not self.pieces:
            return INF
        return min(p.latency + y / p.rate for p in self.pieces)

    def shift_down(self, amount: float) -> "ConvexPWL":
        """[beta - amount]^+, still a max of rate-latency pieces."""
        if amount <= 0:
            return self
        return ConvexPWL.of(RateLatency(p.rate, p.latency + amount / p.rate) for p in self.pieces)

    def dominates(self, other: "ConvexPWL", rtol: float = CURVE_RTOL) -> bool:
        """True if self >= other everywhere, up to ``rtol``."""
        if other.final_rate > self.final_rate * (1 + rtol) + 1e-300:
            return False
        for t in _probe_points(self, other):
            a, b = self(t), other(t)
            if a < b - rtol * max(abs(a), abs(b), 1e-300):
                return False
        return True

    def improves_on(self, other: "ConvexPWL", rtol: float = CURVE_RTOL) -> bool:
        """True if self exceeds other somewhere by more than ``rtol``."""
        if self.final_rate > other.final_rate * (1 + rtol) + 1e-300:
            return True
        for t in _probe_points(self, other):
            a, b = self(t), other(t)
            if a > b + rtol * max(abs(a), abs(b), 1e-300):
                return True
        return False


@dataclass(frozen=True)
class ConcavePWL:
    """Minimum of token-bucket pieces; 0 at t = 0.

    Pieces are sorted by increasing burst and decreasing rate, dominated
    pieces removed. A single ``TokenBucket(0, 0)`` is the zero arrival curve.
    Line shaping enters as an ordinary piece ``TokenBucket(link_rate, l_max)``.
    """

    pieces: tuple[TokenBucket, ...]

    @classmethod
    def of(cls, pieces: Iterable[TokenBucket]) -> "ConcavePWL":
        pieces = list(pieces)
        if not pieces:
            raise ValueError("a concave curve needs at least one piece")
        return cls(_lower_envelope(pieces))

    @classmethod
    def zero(cls) -> "ConcavePWL":
        return cls((TokenBucket(0.0, 0.0),))

    def __call__(self, t: float) -> float:
        if t <= 0:
            return 0.0
        return min(p.rate * t + p.burst for p in self.pieces)

    @property
    def is_zero(self) -> bool:
        return self.pieces[0].burst == 0 and self.final_rate == 0

    @property
    def burst(self) -> float:
        """Value at 0+."""
        return self.pieces[0].burst

    @property
    def final_rate(self) -> float:
        return self.pieces[-1].rate

    @property
    def long_term(self) -> TokenBucket:
        return self.pieces[-1]

    def breakpoints(self) -> list[float]:
        return [_tb_crossing(a, b) for a, b in zip(self.pieces, self.pieces[1:])]

    def segments(self) -> list[tuple[float, TokenBucket]]:
        """(start time, active piece) for each linear segment."""
        return list(zip([0.0] + self.breakpoints(), self.pieces))

    def time_to_reach(self, y: float) -> float:
        """Smallest t > 0 with value >= y (inf if never)."""
        t = 0.0
        for p in self.pieces:
            if p.burst >= y:
                continue
            if p.rate == 0:
                return INF
            t = max(t, (y - p.burst) / p.rate)
        return t

    def __add__(self, other: "ConcavePWL") -> "ConcavePWL":
        return concave_sum([self, other])


Curve = Union[RateLatency, TokenBucket, ConvexPWL, ConcavePWL, CappedRateLatency]


def evaluate(curve: Curve, t: float) -> float:
    if t < 0:
        raise ValueError(f"curves are defined on t >= 0, got {t}")
    return curve(t)


def _crossing(a: RateLatency, b: RateLatency) -> float:
    # a.rate < b.rate
    return (b.rate * b.latency - a.rate * a.latency) / (b.rate - a.rate)


def _tb_crossing(a: TokenBucket, b: TokenBucket) -> float:
    # a.burst < b.burst, a.rate > b.rate
    return (b.burst - a.burst) / (a.rate - b.rate)


def _upper_envelope(pieces: Iterable[RateLatency]) -> tuple[RateLatency, ...]:
    best: dict[float, float] = {}
    for p in pieces:
        if p.rate <= 0:
            continue
        if p.rate not in best or p.latency < best[p.rate]:
            best[p.rate] = p.latency
    lines = sorted(best.items())
    hull: list[RateLatency] = []
    for rate, lat in lines:
        cand = RateLatency(rate, lat)
        while hull:
            last = hull[-1]
            # cand has the larger rate, so it wins for large t; last survives
            # only if it is strictly on top somewhere before the crossing
            start = last.latency if len(hull) == 1 else _crossing(hull[-2], last)
            x = _crossing(last, cand)
            if x <= start + PRUNE_RTOL * max(abs(start), abs(x), 1e-300):
                hull.pop()
            else:
                break
        hull.append(cand)
    return tuple(hull)


def _lower_envelope(pieces: list[TokenBucket]) -> tuple[TokenBucket, ...]:
    finite = [p for p in pieces if math.isfinite(p.burst)]
    if not finite:
        return (TokenBucket(min(p.rate for p in pieces), INF),)
    best: dict[float, float] = {}
    for p in finite:
        if p.burst not in best or p.rate < best[p.burst]:
            best[p.burst] = p.rate
    lines = sorted(best.items())  # increasing burst
    hull: list[TokenBucket] = []
    for burst, rate in lines:
        cand = TokenBucket(rate, burst)
        if hull and cand.rate >= hull[-1].rate:
            continue  # never below the current envelope
        while hull:
            last = hull[-1]
            start = 0.0 if len(hull) == 1 else _tb_crossing(hull[-2], last)
            x = _tb_crossing(last, cand)
            if x <= start + PRUNE_RTOL * max(abs(start), abs(x), 1e-300):
                hull.pop()
            else:
                break
        hull.append(cand)
    return tuple(hull)


def _probe_points(a: ConvexPWL, b: ConvexPWL) -> list[float]:
    pts = sorted(set(a.breakpoints()) | set(b.breakpoints()))
    if pts:
        pts.append(2 * pts[-1] + 1.0)
    return pts


def max_convex(a: ConvexPWL, b: ConvexPWL) -> ConvexPWL:
    """Pointwise maximum of two convex curves."""
    return ConvexPWL.of(a.pieces + b.pieces)


def concave_sum(curves: Sequence[ConcavePWL]) -> ConcavePWL:
    """Pointwise sum of concave curves, as a minimum of token buckets."""
    if not curves:
        return ConcavePWL.zero()
    if any(not math.isfinite(c.burst) for c in curves):
        return ConcavePWL((TokenBucket(sum(c.final_rate for c in curves), INF),))
    times = sorted({0.0} | {t for c in curves for t in c.breakpoints()})
    out = []
    for t in times:
        rate = burst = 0.0
        for c in curves:
            p = _active(c, t)
            rate += p.rate
            burst += p.burst
        out.append(TokenBucket(rate, burst))
    return ConcavePWL.of(out)


def _active(c: ConcavePWL, t: float) -> TokenBucket:
    # piece in force just after t
    active = c.pieces[0]
    for start, p in c.segments():
        if start <= t:
            active = p
    return active


def deconvolve_tb_rl(alpha: TokenBucket, beta: RateLatency) -> TokenBucket:
    """Output arrival curve gamma_{r, b + r T} of a token bucket through beta_{R,T}."""
    if alpha.rate > beta.rate or not alpha.finite:
        return TokenBucket(alpha.rate, INF)
    return TokenBucket(alpha.rate, alpha.burst + alpha.rate * beta.latency)


def deconvolve(alpha: TokenBucket, beta: ConvexPWL) -> TokenBucket:
    """alpha (/) beta for a token bucket and a convex curve.

    sup_s {r s - beta(s)} is concave in s, so it is attained at 0 or at a
    breakpoint of beta.
    """
    if not alpha.finite:
        return alpha
    if alpha.rate == 0:
        return alpha
    if alpha.rate > beta.final_rate:
        return TokenBucket(alpha.rate, INF)
    extra = 0.0
    for s in beta.breakpoints():
        extra = max(extra, alpha.rate * s - beta(s))
    return TokenBucket(alpha.rate, alpha.burst + extra)


def h_dev(alpha: ConcavePWL | TokenBucket, beta: ConvexPWL) -> float:
    """Horizontal deviation between a concave arrival curve and a convex service curve."""
    if isinstance(alpha, TokenBucket):
        alpha = ConcavePWL.of([alpha])
    if alpha.is_zero:
        return 0.0
    if not math.isfinite(alpha.burst):
        return INF
    if beta.is_zero or alpha.final_rate > beta.final_rate:
        return INF
    # t -> beta^{-1}(alpha(t)) - t is concave; its sup sits on a candidate
    cands = [0.0] + alpha.breakpoints()
    for bp in beta.breakpoints():
        y = beta(bp)
        if y > alpha.burst:
            t = alpha.time_to_reach(y)
            if math.isfinite(t):
                cands.append(t)
    best = 0.0
    for t in cands:
        y = alpha.burst if t == 0 else alpha(t)
        best = max(best, beta.inverse(y) - t)
    return best


def compose_through_aggregate(
    gamma: ConvexPWL, aggregate: RateLatency, leftover: Sequence[TokenBucket]
) -> ConvexPWL:
    """gamma o [B - sum(leftover)]^+_up for a rate-latency B and token buckets.

    The closure of B(t) - (rho t + sigma) is the rate-latency curve with rate
    R - rho and latency (R T + sigma) / (R - rho). Composing each piece
    beta_{p, tau} of gamma with beta_{R', t0} gives beta_{p R', t0 + tau / R'}.
    Returns the zero curve when the leftover rate reaches R.
    """
    rho = sum(tb.rate for tb in leftover)
    sigma = sum(tb.burst for tb in leftover)
    if not math.isfinite(sigma):
        raise ValueError("leftover traffic must have finite bursts")
    residual = aggregate.rate - rho
    if residual <= 0:
        return ConvexPWL()
    t0 = (aggregate.rate * aggregate.latency + sigma) / residual
    return ConvexPWL.of(
        RateLatency(p.rate * residual, t0 + p.latency / residual) for p in gamma.pieces
    )
