"""Packet-level discrete-event simulator of a network of DRR output ports.

A packet reaching a device first crosses the switching fabric (a pure delay
of the port latency), then waits in the FIFO queue of its class. The port
serves its class queues in deficit round robin on a link of constant rate;
a packet reaches the next device when its last bit has been sent.

Equal-time events are processed in the order: arrivals, enqueues, end of
transmission. Among queues that become non-empty together, the round-robin
pointer decides, starting from the lowest class index.
"""
from __future__ import annotations

import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .model import FlowSpec, NetworkSpec

GREEDY, PERIODIC, RANDOM = "greedy", "periodic", "random"
POLICIES = (GREEDY, PERIODIC, RANDOM)
CHECK_SLACK = 1e-9

_ARRIVE, _ENQUEUE, _TXDONE = 0, 1, 2


@dataclass
class SimScenario:
    spec: NetworkSpec
    policy: str = GREEDY
    horizon: float | None = None  # sources stop emitting after this time
    seed: int = 0
    trace: bool = False
    # explicit (time, flow id, size) packets; replaces the sources when set
    packets: list[tuple[float, str, float]] | None = None

    def effective_horizon(self) -> float:
        if self.horizon is not None:
            return self.horizon
        lmax = max((m for nd in self.spec.nodes for m in nd.max_packet), default=1.0)
        rmin = min((nd.rate for nd in self.spec.nodes), default=1.0)
        return 2000.0 * lmax / rmin


@dataclass
class SimReport:
    flow_delay: dict[str, float] = field(default_factory=dict)
    node_delay: dict[tuple[str, int], float] = field(default_factory=dict)
    edge_burst: dict[tuple[int, tuple[str, str]], float] = field(default_factory=dict)
    node_burst: dict[tuple[str, int], float] = field(default_factory=dict)
    emitted: int = 0
    completed: int = 0
    trace: list[str] = field(default_factory=list)
    emissions: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    # per (node, class): (enqueue, start, end, size) of each transmitted packet
    service: dict[tuple[str, int], list[tuple[float, float, float, float]]] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.completed == 0


@dataclass
class _Packet:
    flow: int
    seq: int
    size: float
    born: float
    hop: int = 0
    at_node: float = 0.0
    queued: float = 0.0


def packet_size(spec: NetworkSpec, f: FlowSpec) -> float:
    """Largest packet the flow may send: bounded by the class maximum on its
    path and by its burst, rounded down to the byte granularity."""
    lmax = min(spec.node(v).max_packet[f.cls] for v in f.path)
    eps = min(spec.node(v).epsilon for v in f.path)
    size = min(lmax, f.burst)
    return math.floor(size / eps + 1e-9) * eps


def source_times(f: FlowSpec, size: float, policy: str, horizon: float, rng: random.Random,
                 offset: float = 0.0, grain: float | None = None) -> list[tuple[float, float]]:
    """Emission (time, size) pairs that respect the flow's token bucket.

    Greedy sources send as soon as tokens allow; periodic ones space packets
    at the sustained rate; random ones draw sizes on the ``grain`` grid and
    insert random idle gaps.
    """
    if size <= 0 or f.rate <= 0:
        return []
    grain = grain or size
    steps = max(1, int(round(size / grain)))
    out = []
    tokens, t, last = f.burst, offset, offset
    while t <= horizon:
        sz = size if policy != RANDOM else min(size, rng.randint(1, steps) * grain)
        tokens = min(f.burst, tokens + f.rate * (t - last))
        last = t
        if tokens < sz:
            t += (sz - tokens) / f.rate
            tokens, last = sz, t
            if t > horizon:
                break
        out.append((t, sz))
        tokens -= sz
        if policy == PERIODIC:
            t += size / f.rate
        elif policy == RANDOM and rng.random() < 0.5:
            t += rng.expovariate(f.rate / (2 * size))
    return out


class _Port:
    def __init__(self, n: int):
        self.queues = [deque() for _ in range(n)]
        self.deficit = [0.0] * n
        self.current: int | None = None
        self.pointer = 0
        self.busy = False


def simulate(sc: SimScenario) -> SimReport:
    spec = sc.spec
    rng = random.Random(sc.seed)
    horizon = sc.effective_horizon()
    n = spec.n_classes
    flows = spec.flows
    nodes = {nd.id: nd for nd in spec.nodes}
    ports = {v: _Port(n) for v in nodes}
    rep = SimReport()
    trace = rep.trace if sc.trace else None
    events: list = []
    counter = 0

    def push(t, kind, data):
        nonlocal counter
        counter += 1
        heapq.heappush(events, (t, kind, counter, data))

    span = 10 * max((nd.latency + max(nd.max_packet) / nd.rate for nd in spec.nodes), default=0.0)
    if sc.packets is not None:
        index = {f.id: i for i, f in enumerate(flows)}
        for k, (t, fid, sz) in enumerate(sorted(sc.packets)):
            rep.emissions.setdefault(fid, []).append((t, sz))
            push(t, _ARRIVE, _Packet(index[fid], k, sz, t))
    for i, f in enumerate(flows if sc.packets is None else ()):
        size = packet_size(spec, f)
        offset = rng.uniform(0, span) if sc.seed else 0.0
        grain = min(spec.node(v).epsilon for v in f.path)
        em = source_times(f, size, sc.policy, horizon, rng, offset, grain)
        rep.emissions[f.id] = em
        for k, (t, sz) in enumerate(em):
            push(t, _ARRIVE, _Packet(i, k, sz, t))
    rep.emitted = len(events)

    departures: dict[tuple[str, int], list[tuple[float, float]]] = {}
    edge_arrivals: dict[tuple[int, tuple[str, str]], list[tuple[float, float]]] = {}

    def log(t, text):
        if trace is not None:
            trace.append(f"{t:.12g} {text}")

    def transmit(v, c, now):
        port = ports[v]
        pkt = port.queues[c].popleft()
        port.deficit[c] -= pkt.size
        port.busy = True
        log(now, f"start {v} c{c} {flows[pkt.flow].id}#{pkt.seq} size={pkt.size:g} deficit={port.deficit[c]:g}")
        end = now + pkt.size / nodes[v].rate
        rep.service.setdefault((v, c), []).append((pkt.queued, now, end, pkt.size))
        push(end, _TXDONE, (v, c, pkt))

    def serve_next(v, now):
        port = ports[v]
        nd = nodes[v]
        while True:
            c = port.current
            if c is not None:
                q = port.queues[c]
                if q and q[0].size <= port.deficit[c]:
                    transmit(v, c, now)
                    return
                if not q:
                    port.deficit[c] = 0.0
                    log(now, f"reset {v} c{c}")
                port.pointer = (c + 1) % n
                port.current = None
            for k in range(n):
                c = (port.pointer + k) % n
                if nd.quanta[c] > 0 and port.queues[c]:
                    port.current = c
                    port.deficit[c] += nd.quanta[c]
                    log(now, f"visit {v} c{c} deficit={port.deficit[c]:g}")
                    break
            else:
                port.busy = False
                return

    limit = horizon * 50 + 1.0
    while events:
        t, kind, _, data = heapq.heappop(events)
        if t > limit:
            break
        if kind == _ARRIVE:
            pkt = data
            f = flows[pkt.flow]
            v = f.path[pkt.hop]
            pkt.at_node = t
            log(t, f"arrive {v} {f.id}#{pkt.seq}")
            push(t + nodes[v].latency, _ENQUEUE, pkt)
        elif kind == _ENQUEUE:
            pkt = data
            f = flows[pkt.flow]
            v = f.path[pkt.hop]
            pkt.queued = t
            ports[v].queues[f.cls].append(pkt)
            log(t, f"enqueue {v} c{f.cls} {f.id}#{pkt.seq}")
            if not ports[v].busy:
                serve_next(v, t)
        else:
            v, c, pkt = data
            f = flows[pkt.flow]
            log(t, f"depart {v} c{c} {f.id}#{pkt.seq}")
            key = (v, c)
            rep.node_delay[key] = max(rep.node_delay.get(key, 0.0), t - pkt.at_node)
            departures.setdefault(key, []).append((t, pkt.size))
            if pkt.hop + 1 == len(f.path):
                rep.flow_delay[f.id] = max(rep.flow_delay.get(f.id, 0.0), t - pkt.born)
                rep.completed += 1
            else:
                nxt = f.path[pkt.hop + 1]
                edge_arrivals.setdefault((c, (v, nxt)), []).append((t, pkt.size))
                pkt.hop += 1
                push(t, _ARRIVE, pkt)
            ports[v].busy = False
            serve_next(v, t)

    rates_node: dict[tuple[str, int], float] = {}
    rates_edge: dict[tuple[int, tuple[str, str]], float] = {}
    for f in flows:
        for i, v in enumerate(f.path):
            rates_node[(v, f.cls)] = rates_node.get((v, f.cls), 0.0) + f.rate
            if i + 1 < len(f.path):
                e = (f.cls, (v, f.path[i + 1]))
                rates_edge[e] = rates_edge.get(e, 0.0) + f.rate
    for key, pts in departures.items():
        rep.node_burst[key] = burstiness(pts, rates_node[key])
    for key, pts in edge_arrivals.items():
        rep.edge_burst[key] = burstiness(pts, rates_edge[key])
    return rep


def burstiness(points: Iterable[tuple[float, float]], rate: float) -> float:
    """Smallest b with  bits in [s, t] <= b + rate (t - s)  over all windows,
    for instantaneous arrivals ``(time, size)``."""
    best = 0.0
    low = math.inf  # min over i of  S_{i-1} - rate t_i
    total = 0.0
    for t, size in sorted(points):
        low = min(low, total - rate * t)
        total += size
        best = max(best, total - rate * t - low)
    return best


def conforms(emissions: list[tuple[float, float]], rate: float, burst: float, slack: float = 1e-9) -> bool:
    """Sliding-window check of a source against its token bucket."""
    return burstiness(emissions, rate) <= burst * (1 + slack) + slack


# ---------------------------------------------------------------- checks

@dataclass
class Verdict:
    ok: bool
    violations: list[str]

    def __bool__(self) -> bool:
        return self.ok


def check_bounds(report: SimReport, snap=None, e2e: dict[str, float] | None = None,
                 slack: float = CHECK_SLACK) -> Verdict:
    """Every observed quantity must stay below its bound (infinite bounds pass)."""
    bad = []

    def over(obs, bound):
        return obs > bound + slack * max(1.0, abs(bound)) if math.isfinite(bound) else False

    for fid, obs in sorted((e2e and report.flow_delay or {}).items()):
        bound = e2e.get(fid, math.inf)
        if over(obs, bound):
            bad.append(f"flow {fid}: observed delay {obs:.9g} > bound {bound:.9g}")
    if snap is not None:
        for (v, c), obs in sorted(report.node_delay.items()):
            bound = snap.delay.get((v, c), math.inf)
            if over(obs, bound):
                bad.append(f"node {v} class {c}: observed delay {obs:.9g} > bound {bound:.9g}")
        for (v, c), obs in sorted(report.node_burst.items()):
            bound = snap.b_node.get((v, c), math.inf)
            if over(obs, bound):
                bad.append(f"node {v} class {c}: output burst {obs:.9g} > bound {bound:.9g}")
        for (c, e), obs in sorted(report.edge_burst.items()):
            bound = snap.b_edge.get((c, e), math.inf)
            if over(obs, bound):
                bad.append(f"edge {e[0]}->{e[1]} class {c}: burst {obs:.9g} > bound {bound:.9g}")
    return Verdict(not bad, bad)
