"""Per-class graphs induced by flows, cut sets and their forest decomposition."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import cached_property

import networkx as nx

from .model import FlowSpec, NetworkSpec

Edge = tuple[str, str]


@dataclass(frozen=True)
class ClassGraph:
    cls: int
    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    edge_flows: dict[Edge, tuple[str, ...]]
    flows: tuple[FlowSpec, ...]

    def in_edges(self, v: str) -> list[Edge]:
        return [e for e in self.edges if e[1] == v]

    def out_edges(self, v: str) -> list[Edge]:
        return [e for e in self.edges if e[0] == v]

    def flows_at(self, v: str) -> list[FlowSpec]:
        return [f for f in self.flows if v in f.path]

    def fresh_at(self, v: str) -> list[FlowSpec]:
        return [f for f in self.flows if f.path[0] == v]

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.vertices)
        g.add_edges_from(self.edges)
        return g

    @property
    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.to_networkx())


def build_class_graph(spec: NetworkSpec, c: int) -> ClassGraph:
    flows = tuple(spec.flows_of(c))
    vertices = sorted({v for f in flows for v in f.path})
    edge_flows: dict[Edge, list[str]] = {}
    for f in flows:
        for e in zip(f.path, f.path[1:]):
            edge_flows.setdefault(e, []).append(f.id)
    edges = tuple(sorted(edge_flows))
    return ClassGraph(c, tuple(vertices), edges, {e: tuple(edge_flows[e]) for e in edges}, flows)


@dataclass(frozen=True)
class CutSet:
    cls: int
    edges: frozenset[Edge]


def compute_cutset(g: ClassGraph, seed: int | None = None) -> CutSet:
    """Keep at most one outgoing edge per vertex without closing a cycle; cut the rest.

    Vertices are visited depth-first from the sources, by id (or in an order
    permuted by ``seed``). Each vertex keeps the out-edge carrying the most
    flows whose head does not lead back to it, which leaves a forest of
    in-trees.
    """
    order = _dfs_order(g, seed)
    succ: dict[str, str] = {}

    def reaches(start: str, target: str) -> bool:
        v = start
        while v is not None:
            if v == target:
                return True
            v = succ.get(v)
        return False

    rng = random.Random(seed) if seed is not None else None
    for v in order:
        outs = g.out_edges(v)
        ranked = sorted(outs, key=lambda e: (-len(g.edge_flows[e]), e[1]))
        if rng is not None:
            rng.shuffle(ranked)
        for e in ranked:
            if not reaches(e[1], v):
                succ[v] = e[1]
                break
    kept = {(v, u) for v, u in succ.items()}
    return CutSet(g.cls, frozenset(e for e in g.edges if e not in kept))


def _dfs_order(g: ClassGraph, seed: int | None) -> list[str]:
    nxg = g.to_networkx()
    vertices = list(g.vertices)
    if seed is not None:
        random.Random(seed).shuffle(vertices)
    sources = [v for v in vertices if nxg.in_degree(v) == 0]
    seen: set[str] = set()
    order: list[str] = []
    for start in sources + vertices:
        if start in seen:
            continue
        stack = [start]
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            order.append(v)
            stack.extend(sorted((u for _, u in g.out_edges(v) if u not in seen), reverse=True))
    return order


@dataclass(frozen=True)
class Segment:
    """Part of a flow between two cuts. Index 0 starts at the flow source."""

    id: str
    flow: str
    cls: int
    path: tuple[str, ...]
    rate: float
    index: int
    burst: float  # source burst for fresh segments; unused for transit ones

    @property
    def fresh(self) -> bool:
        return self.index == 0

    @property
    def source(self) -> str:
        return self.path[0]

    @property
    def sink(self) -> str:
        return self.path[-1]


@dataclass(frozen=True)
class SubTree:
    """Ancestors of ``root`` in the cut forest, depths counted from an
    artificial sink below the root (the root has depth 1)."""

    root: str
    nodes: tuple[str, ...]  # upstream first, root last
    succ: dict[str, str | None]
    depth: dict[str, int]
    segments: tuple[Segment, ...]  # truncated to their part inside the sub-tree

    def segments_at(self, v: str) -> list[Segment]:
        return [s for s in self.segments if v in s.path]

    def segments_on(self, v: str, u: str) -> list[Segment]:
        out = []
        for s in self.segments:
            if v in s.path:
                i = s.path.index(v)
                if i + 1 < len(s.path) and s.path[i + 1] == u:
                    out.append(s)
        return out


@dataclass(frozen=True)
class ForestDecomposition:
    cls: int
    graph: ClassGraph
    cut: CutSet
    succ: dict[str, str | None]
    segments: tuple[Segment, ...]
    _subtrees: dict = field(default_factory=dict, compare=False, repr=False)

    @cached_property
    def roots(self) -> tuple[str, ...]:
        return tuple(v for v in self.graph.vertices if self.succ[v] is None)

    @cached_property
    def depth(self) -> dict[str, int]:
        dp: dict[str, int] = {}

        def depth_of(v: str) -> int:
            if v not in dp:
                u = self.succ[v]
                dp[v] = 1 if u is None else depth_of(u) + 1
            return dp[v]

        for v in self.graph.vertices:
            depth_of(v)
        return dp

    @cached_property
    def predecessors(self) -> dict[str, list[str]]:
        pred: dict[str, list[str]] = {v: [] for v in self.graph.vertices}
        for v, u in self.succ.items():
            if u is not None:
                pred[u].append(v)
        return pred

    def tree_of(self, v: str) -> str:
        while self.succ[v] is not None:
            v = self.succ[v]
        return v

    def trees(self) -> dict[str, list[str]]:
        """Root -> members in topological order (leaves first)."""
        out: dict[str, list[str]] = {r: [] for r in self.roots}
        for v in sorted(self.graph.vertices, key=lambda x: (-self.depth[x], x)):
            out[self.tree_of(v)].append(v)
        return out

    @cached_property
    def transit_segments(self) -> tuple[Segment, ...]:
        return tuple(s for s in self.segments if not s.fresh)

    def segments_of(self, flow_id: str) -> list[Segment]:
        return [s for s in self.segments if s.flow == flow_id]

    def previous(self, seg: Segment) -> Segment:
        return next(s for s in self.segments if s.flow == seg.flow and s.index == seg.index - 1)

    def subtree(self, root: str) -> SubTree:
        if root in self._subtrees:
            return self._subtrees[root]
        members = [root]
        frontier = [root]
        while frontier:
            v = frontier.pop()
            for w in sorted(self.predecessors[v]):
                members.append(w)
                frontier.append(w)
        member_set = set(members)
        depth = {root: 1}
        for v in members[1:]:
            # predecessors were appended after their successor
            depth[v] = depth[self.succ[v]] + 1
        succ = {v: (None if v == root else self.succ[v]) for v in members}
        segs = []
        for s in self.segments:
            if s.path[0] not in member_set:
                continue
            # the part inside the sub-tree is a prefix that stops at the root
            end = s.path.index(root) + 1 if root in s.path else len(s.path)
            path = s.path[:end]
            assert all(v in member_set for v in path), "segment leaves the sub-tree"
            segs.append(Segment(s.id, s.flow, s.cls, path, s.rate, s.index, s.burst))
        nodes = tuple(sorted(members, key=lambda x: (-depth[x], x)))
        st = SubTree(root, nodes, succ, depth, tuple(segs))
        self._subtrees[root] = st
        return st


def decompose_forest(g: ClassGraph, cut: CutSet) -> ForestDecomposition:
    kept = [e for e in g.edges if e not in cut.edges]
    succ: dict[str, str | None] = {v: None for v in g.vertices}
    for v, u in kept:
        if succ[v] is not None:
            raise ValueError(f"vertex {v} keeps two outgoing edges after the cut")
        succ[v] = u
    h = nx.DiGraph()
    h.add_nodes_from(g.vertices)
    h.add_edges_from(kept)
    if not nx.is_directed_acyclic_graph(h):
        raise ValueError("cut leaves a cycle")
    segments = []
    for f in g.flows:
        start = 0
        index = 0
        for i in range(len(f.path) - 1):
            if (f.path[i], f.path[i + 1]) in cut.edges:
                segments.append(_segment(f, index, f.path[start:i + 1]))
                start = i + 1
                index += 1
        segments.append(_segment(f, index, f.path[start:]))
    return ForestDecomposition(g.cls, g, cut, succ, tuple(segments))


def _segment(f: FlowSpec, index: int, path: tuple[str, ...]) -> Segment:
    sid = f.id if index == 0 else f"{f.id}#{index}"
    return Segment(sid, f.id, f.cls, path, f.rate, index, f.burst)


def decompose(spec: NetworkSpec, c: int, cut_seed: int | None = None) -> ForestDecomposition:
    g = build_class_graph(spec, c)
    return decompose_forest(g, compute_cutset(g, cut_seed))


def to_dot(spec: NetworkSpec, forests: list[ForestDecomposition]) -> str:
    """Graphviz rendering of the class graphs; cut edges are dashed."""
    lines = ["digraph classes {", "  rankdir=LR;"]
    for fd in forests:
        name = spec.classes[fd.cls]
        lines.append(f'  subgraph "cluster_{name}" {{')
        lines.append(f'    label="{name}";')
        for v in fd.graph.vertices:
            lines.append(f'    "{name}:{v}" [label="{v}"];')
        for e in fd.graph.edges:
            attrs = [f'label="{",".join(fd.graph.edge_flows[e])}"']
            if e in fd.cut.edges:
                attrs.append("style=dashed")
            lines.append(f'    "{name}:{e[0]}" -> "{name}:{e[1]}" [{", ".join(attrs)}];')
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"
