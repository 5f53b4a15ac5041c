import math
from pathlib import Path

import pytest

from drrbound.model import (
    SpecError,
    errors,
    load_spec,
    parse_data,
    parse_rate,
    parse_spec,
    parse_time,
    serialize_spec,
    validate,
)

TOY = Path(__file__).parent / "data" / "toy.yaml"

INDUSTRIAL = """
classes:
  - {name: critical, max_packet: 150 B}
  - {name: a, max_packet: 150 B}
  - {name: b, max_packet: 150 B}
nodes:
  - {id: S1, rate: 1 Gb/s, latency: 16 us, quanta: {critical: 3070 B, a: 1535 B, b: 1535 B}}
flows: []
"""


def test_units():
    assert parse_data("1500 B") == 12000
    assert parse_data("1 KB") == 8000
    assert parse_data(64) == 64
    assert parse_time("16 us") == pytest.approx(1.6e-5)
    assert parse_rate("1 Gb/s") == 1e9
    assert parse_rate("100 Mbps") == 1e8
    assert math.isinf(parse_data("inf"))
    with pytest.raises(SpecError):
        parse_data("3 parsecs")


def test_industrial_port_normalized():
    spec = parse_spec(INDUSTRIAL)
    nd = spec.node("S1")
    assert nd.rate == 1e9
    assert nd.latency == pytest.approx(1.6e-5)
    assert nd.quanta == (24560, 12280, 12280)
    assert spec.flows == ()


def test_missing_node_named():
    text = INDUSTRIAL.replace("flows: []", "flows:\n  - {id: f9, class: a, path: [S1, S9], rate: 1, burst: 1}")
    with pytest.raises(SpecError) as exc:
        parse_spec(text)
    assert "f9" in str(exc.value) and "S9" in str(exc.value)


def test_toy_is_clean():
    spec = load_spec(TOY)
    assert len(spec.flows) == 5 and spec.n_classes == 2
    assert errors(spec) == []


def test_repeated_node_and_small_quantum():
    text = """
classes: [{name: c, max_packet: 200 bit}]
nodes:
  - {id: a, rate: 10, quanta: {c: 100 bit}}
  - {id: b, rate: 10, quanta: {c: 100 bit}}
flows:
  - {id: f, class: c, path: [a, b, a], rate: 1, burst: 1}
"""
    diags = validate(parse_spec(text))
    assert any(d.level == "error" and "twice" in d.message for d in diags)
    assert any(d.level == "warning" and "below the max packet" in d.message for d in diags)


def test_multicast_expansion_and_utilization():
    text = """
utilization: 0.5
classes: [{name: c, max_packet: 8}]
nodes:
  - {id: a, rate: 10, quanta: {c: 8}}
  - {id: b, rate: 10, quanta: {c: 8}}
  - {id: d, rate: 10, quanta: {c: 8}}
flows:
  - {id: m, class: c, destinations: [[a, b], [a, d]], rate: 2, burst: 4}
"""
    spec = parse_spec(text)
    assert [f.id for f in spec.flows] == ["m.0", "m.1"]
    assert all(f.rate == 1 for f in spec.flows)


def test_round_trip():
    spec = load_spec(TOY)
    again = parse_spec(serialize_spec(spec))
    assert again == spec
    assert parse_spec(serialize_spec(again)) == again
