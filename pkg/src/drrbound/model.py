"""Network description: classes, DRR output ports and flows.

A spec file is YAML with three sections::

    utilization: 1.0          # optional multiplier on every flow rate
    classes:
      - {name: critical, max_packet: 150 B}
    nodes:
      - id: S1
        rate: 1 Gb/s
        latency: 16 us
        epsilon: 1 B          # optional, default 8 bit
        quanta: {critical: 3070 B}
        max_packet: {critical: 100 B}   # optional per-port override
    flows:
      - {id: f1, class: critical, path: [S1, S2], rate: 1 Mb/s, burst: 1500 B}
      - {id: m1, class: critical, destinations: [[S1, S2], [S1, S3]],
         rate: 1 Mb/s, burst: 1500 B}

Quantities are either bare numbers (bits, seconds, bit/s) or strings with a
unit. Everything is normalized to bits and seconds on parsing.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Any

import yaml

from .curves import RateLatency, TokenBucket

DEFAULT_EPSILON = 8.0

_DATA_UNITS = {
    "bit": 1.0, "bits": 1.0, "b": 1.0,
    "B": 8.0, "byte": 8.0, "bytes": 8.0,
    "Kb": 1e3, "kb": 1e3, "kbit": 1e3, "Kbit": 1e3,
    "KB": 8e3, "kB": 8e3,
    "Mb": 1e6, "Mbit": 1e6, "MB": 8e6,
    "Gb": 1e9, "Gbit": 1e9, "GB": 8e9,
}
_TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "μs": 1e-6, "ns": 1e-9}
_RATE_SUFFIXES = {"bps": 1.0, "Kbps": 1e3, "kbps": 1e3, "Mbps": 1e6, "Gbps": 1e9}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


class SpecError(ValueError):
    """Raised for malformed spec documents; ``path`` locates the field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.path}: {self.message}"


@dataclass(frozen=True)
class NodeConfig:
    """A DRR output port. Per-class tuples are indexed by class; a zero
    quantum means the class is not configured on this port."""

    id: str
    rate: float
    latency: float
    quanta: tuple[float, ...]
    max_packet: tuple[float, ...]
    epsilon: float = DEFAULT_EPSILON

    @property
    def aggregate(self) -> RateLatency:
        return RateLatency(self.rate, self.latency)

    @property
    def classes(self) -> list[int]:
        return [c for c, q in enumerate(self.quanta) if q > 0]

    def residual_deficit(self, c: int) -> float:
        return self.max_packet[c] - self.epsilon


@dataclass(frozen=True)
class FlowSpec:
    id: str
    cls: int
    path: tuple[str, ...]
    rate: float
    burst: float

    @property
    def arrival(self) -> TokenBucket:
        return TokenBucket(self.rate, self.burst)


@dataclass(frozen=True)
class NetworkSpec:
    classes: tuple[str, ...]
    nodes: tuple[NodeConfig, ...]
    flows: tuple[FlowSpec, ...]
    _index: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {n.id: n for n in self.nodes})

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def node(self, node_id: str) -> NodeConfig:
        return self._index[node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._index

    def flow(self, flow_id: str) -> FlowSpec:
        for f in self.flows:
            if f.id == flow_id:
                return f
        raise KeyError(flow_id)

    def flows_of(self, c: int) -> list[FlowSpec]:
        return [f for f in self.flows if f.cls == c]

    def scaled(self, utilization: float) -> "NetworkSpec":
        """Copy with every flow rate multiplied by ``utilization``."""
        return replace(self, flows=tuple(replace(f, rate=f.rate * utilization) for f in self.flows))


def _parse_number(text: str) -> tuple[float, str]:
    m = _QUANTITY.match(text)
    if not m:
        raise ValueError(f"cannot read quantity {text!r}")
    return float(m.group(1)), m.group(2)


def parse_data(value: Any, path: str = "") -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        if value.strip() in ("inf", "+inf"):
            return math.inf
        num, unit = _parse_number(value)
        if unit == "":
            return num
        if unit in _DATA_UNITS:
            return num * _DATA_UNITS[unit]
        raise SpecError(path, f"unknown data unit {unit!r}")
    raise SpecError(path, f"expected a data quantity, got {value!r}")


def parse_time(value: Any, path: str = "") -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        num, unit = _parse_number(value)
        if unit == "":
            return num
        if unit in _TIME_UNITS:
            return num * _TIME_UNITS[unit]
        raise SpecError(path, f"unknown time unit {unit!r}")
    raise SpecError(path, f"expected a time quantity, got {value!r}")


def parse_rate(value: Any, path: str = "") -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        num, unit = _parse_number(value)
        if unit == "":
            return num
        if unit in _RATE_SUFFIXES:
            return num * _RATE_SUFFIXES[unit]
        if "/" in unit:
            data_unit, time_unit = (u.strip() for u in unit.split("/", 1))
            if data_unit in _DATA_UNITS and time_unit in _TIME_UNITS:
                return num * _DATA_UNITS[data_unit] / _TIME_UNITS[time_unit]
        raise SpecError(path, f"unknown rate unit {unit!r}")
    raise SpecError(path, f"expected a rate quantity, got {value!r}")


def _require(mapping: dict, key: str, path: str) -> Any:
    if not isinstance(mapping, dict):
        raise SpecError(path, "expected a mapping")
    if key not in mapping:
        raise SpecError(f"{path}.{key}", "missing required field")
    return mapping[key]


def _per_class(raw: Any, names: dict[str, int], path: str, parse) -> dict[int, float]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise SpecError(path, "expected a mapping from class name to quantity")
    out = {}
    for name, value in raw.items():
        if name not in names:
            raise SpecError(f"{path}.{name}", f"unknown class {name!r}")
        out[names[name]] = parse(value, f"{path}.{name}")
    return out


def parse_spec(text: str) -> NetworkSpec:
    """Parse and normalize a YAML spec document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecError("<document>", f"not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise SpecError("<document>", "top level must be a mapping")
    utilization = float(doc.get("utilization", 1.0))

    raw_classes = _require(doc, "classes", "")
    if not isinstance(raw_classes, list) or not raw_classes:
        raise SpecError("classes", "expected a non-empty list")
    names: dict[str, int] = {}
    default_lmax: list[float] = []
    for i, rc in enumerate(raw_classes):
        p = f"classes[{i}]"
        name = str(_require(rc, "name", p))
        if name in names:
            raise SpecError(f"{p}.name", f"duplicate class {name!r}")
        names[name] = i
        default_lmax.append(parse_data(_require(rc, "max_packet", p), f"{p}.max_packet"))
    n = len(names)

    nodes = []
    for i, rn in enumerate(doc.get("nodes") or []):
        p = f"nodes[{i}]"
        nid = str(_require(rn, "id", p))
        quanta = _per_class(_require(rn, "quanta", p), names, f"{p}.quanta", parse_data)
        lmax = dict(enumerate(default_lmax))
        lmax.update(_per_class(rn.get("max_packet"), names, f"{p}.max_packet", parse_data))
        nodes.append(NodeConfig(
            id=nid,
            rate=parse_rate(_require(rn, "rate", p), f"{p}.rate"),
            latency=parse_time(rn.get("latency", 0), f"{p}.latency"),
            quanta=tuple(quanta.get(c, 0.0) for c in range(n)),
            max_packet=tuple(lmax[c] for c in range(n)),
            epsilon=parse_data(rn.get("epsilon", DEFAULT_EPSILON), f"{p}.epsilon"),
        ))
    node_ids = {nd.id for nd in nodes}
    by_id = {nd.id: nd for nd in nodes}

    flows = []
    for i, rf in enumerate(doc.get("flows") or []):
        p = f"flows[{i}]"
        fid = str(_require(rf, "id", p))
        cname = str(_require(rf, "class", p))
        if cname not in names:
            raise SpecError(f"{p}.class", f"flow {fid!r} uses unknown class {cname!r}")
        c = names[cname]
        if "path" in rf:
            paths = [(fid, rf["path"], f"{p}.path")]
        elif "destinations" in rf:
            dests = rf["destinations"]
            if not isinstance(dests, list) or not dests:
                raise SpecError(f"{p}.destinations", "expected a non-empty list of paths")
            paths = [(f"{fid}.{k}", d, f"{p}.destinations[{k}]") for k, d in enumerate(dests)]
        else:
            raise SpecError(p, "flow needs either 'path' or 'destinations'")
        rate = parse_rate(_require(rf, "rate", p), f"{p}.rate") * utilization
        burst = parse_data(_require(rf, "burst", p), f"{p}.burst")
        for sub_id, path, ppath in paths:
            if not isinstance(path, list) or not path:
                raise SpecError(ppath, "expected a non-empty list of node ids")
            path = tuple(str(x) for x in path)
            for v in path:
                if v not in node_ids:
                    raise SpecError(ppath, f"flow {sub_id!r} references missing node {v!r}")
                if by_id[v].quanta[c] <= 0:
                    raise SpecError(ppath, f"flow {sub_id!r}: class {cname!r} has no quantum at node {v!r}")
            flows.append(FlowSpec(sub_id, c, path, rate, burst))
    return NetworkSpec(tuple(names), tuple(nodes), tuple(flows))


def load_spec(path: str, utilization: float | None = None) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        spec = parse_spec(fh.read())
    return spec.scaled(utilization) if utilization is not None else spec


def validate(spec: NetworkSpec) -> list[Diagnostic]:
    """Errors make the spec unusable; warnings flag questionable settings."""
    out: list[Diagnostic] = []
    seen = set()
    for i, nd in enumerate(spec.nodes):
        if nd.id in seen:
            out.append(Diagnostic("error", f"nodes[{i}].id", f"duplicate node id {nd.id!r}"))
        seen.add(nd.id)
        if nd.rate <= 0:
            out.append(Diagnostic("error", f"nodes[{i}].rate", "rate must be positive"))
        if nd.epsilon <= 0:
            out.append(Diagnostic("error", f"nodes[{i}].epsilon", "epsilon must be positive"))
        for c in nd.classes:
            if nd.quanta[c] < nd.max_packet[c]:
                out.append(Diagnostic(
                    "warning", f"nodes[{i}].quanta.{spec.classes[c]}",
                    f"quantum {nd.quanta[c]:g} bit is below the max packet {nd.max_packet[c]:g} bit"))
    seen = set()
    load: dict[str, float] = {}
    for i, f in enumerate(spec.flows):
        if f.id in seen:
            out.append(Diagnostic("error", f"flows[{i}].id", f"duplicate flow id {f.id!r}"))
        seen.add(f.id)
        if len(set(f.path)) != len(f.path):
            out.append(Diagnostic("error", f"flows[{i}].path", f"flow {f.id!r} visits a node twice"))
        if f.rate < 0 or f.burst < 0:
            out.append(Diagnostic("error", f"flows[{i}]", "rate and burst must be non-negative"))
        for v in f.path:
            load[v] = load.get(v, 0.0) + f.rate
    for v, total in sorted(load.items()):
        if spec.has_node(v) and total >= 0.9 * spec.node(v).rate:
            out.append(Diagnostic(
                "warning", f"node {v}",
                f"flow rates sum to {total / spec.node(v).rate:.1%} of the link rate"))
    return out


def errors(spec: NetworkSpec) -> list[Diagnostic]:
    return [d for d in validate(spec) if d.level == "error"]


def to_document(spec: NetworkSpec) -> dict:
    """Plain-data form of a spec, in normalized units."""
    return {
        "classes": [
            {"name": name, "max_packet": _common_lmax(spec, c)}
            for c, name in enumerate(spec.classes)
        ],
        "nodes": [
            {
                "id": nd.id,
                "rate": nd.rate,
                "latency": nd.latency,
                "epsilon": nd.epsilon,
                "quanta": {spec.classes[c]: nd.quanta[c] for c in nd.classes},
                "max_packet": {spec.classes[c]: nd.max_packet[c] for c in range(spec.n_classes)},
            }
            for nd in spec.nodes
        ],
        "flows": [
            {
                "id": f.id,
                "class": spec.classes[f.cls],
                "path": list(f.path),
                "rate": f.rate,
                "burst": f.burst if math.isfinite(f.burst) else "inf",
            }
            for f in spec.flows
        ],
    }


def _common_lmax(spec: NetworkSpec, c: int) -> float:
    values = {nd.max_packet[c] for nd in spec.nodes}
    return values.pop() if len(values) == 1 else max(values, default=0.0)


def serialize_spec(spec: NetworkSpec) -> str:
    return yaml.safe_dump(to_document(spec), sort_keys=False)
