import math
from pathlib import Path

import pytest

from drrbound.lp import export_lp, solve_lp, solve_milp_enum
from drrbound.model import FlowSpec, NetworkSpec, NodeConfig, load_spec
from drrbound.plp import (
    backlog_edge,
    backlog_node,
    backlog_program,
    delay_program,
    end_to_end,
    fp_plp,
    fp_program,
    iplp_delay,
    plp_backlog_aggregate,
    plp_backlog_single,
    plp_delay,
)
from drrbound.state import AnalysisContext, empty_snapshot
from drrbound.tfa import initial_phase, tfa_end_to_end

from test_model import TOY

GOLDEN = Path(__file__).parent / "data" / "golden"


def net(nodes, flows, classes=("c",)):
    return NetworkSpec(tuple(classes), tuple(nodes), tuple(flows))


def port(name, rate=2.0, latency=3.0, quanta=(200.0,), lmax=(100.0,), eps=1.0):
    return NodeConfig(name, rate, latency, quanta, lmax, eps)


def first_segment(ctx, fid):
    f = ctx.spec.flow(fid)
    return ctx.forests[f.cls].segments_of(fid)[0].id


def fluid(spec):
    ctx = AnalysisContext(spec, packetizer=False)
    return ctx, empty_snapshot(ctx)


def test_single_node_delay_is_rate_latency_bound():
    ctx, snap = fluid(net([port("v")], [FlowSpec("f", 0, ("v",), 1.0, 10.0)]))
    assert plp_delay(ctx, snap, 0, "f") == pytest.approx(3 + 10 / 2, abs=1e-9)
    assert end_to_end(ctx, snap, "f", nonconvex=False) == pytest.approx(8.0, abs=1e-9)


def test_single_node_backlog_is_deconvolution():
    # the exact output burst b + r T; the looser b + r (T + b / R) = 18 is what TFA propagates
    ctx, snap = fluid(net([port("v")], [FlowSpec("f", 0, ("v",), 1.0, 10.0)]))
    assert plp_backlog_single(ctx, snap, 0, "f") == pytest.approx(13.0, abs=1e-6)
    assert backlog_node(ctx, snap, "v", 0) == pytest.approx(13.0, abs=1e-6)


def test_zero_flow_has_zero_backlog():
    ctx, snap = fluid(net([port("v")], [FlowSpec("f", 0, ("v",), 0.0, 0.0)]))
    assert plp_backlog_single(ctx, snap, 0, "f") == pytest.approx(0.0, abs=1e-9)
    assert plp_backlog_aggregate(ctx, snap, 0, "v", []) == 0.0


def test_two_node_chain_variable_count_and_delay_constraints():
    spec = net([port("a"), port("b")], [FlowSpec("f", 0, ("a", "b"), 0.5, 10.0)])
    ctx = AnalysisContext(spec)
    ip = initial_phase(ctx)
    p, _ = delay_program(ctx, ip.snapshot, 0, "f")
    assert sum(1 for n in p.names if n.startswith("t[")) == 5
    assert plp_delay(ctx, ip.snapshot, 0, "f") <= ip.delay[("a", 0)] + ip.delay[("b", 0)] + 1e-9


def test_infinite_node_delay_emits_no_delay_row():
    ctx, snap = fluid(net([port("v")], [FlowSpec("f", 0, ("v",), 1.0, 10.0)]))
    p, _ = delay_program(ctx, snap, 0, "f")
    assert not [c for c in p.constraints if c.name.startswith("delay")]


def test_aggregate_beats_sum_of_singles():
    spec = net([port("a", rate=10.0), port("b", rate=10.0), port("c", rate=10.0)],
               [FlowSpec("f", 0, ("a", "c"), 1.0, 20.0), FlowSpec("g", 0, ("b", "c"), 1.0, 20.0)])
    ctx, snap = fluid(spec)
    single = sum(plp_backlog_single(ctx, snap, 0, s, "c") for s in ("f", "g"))
    both = plp_backlog_aggregate(ctx, snap, 0, "c", ["f", "g"])
    assert both <= single + 1e-9
    assert plp_backlog_aggregate(ctx, snap, 0, "c", ["f"]) == pytest.approx(plp_backlog_single(ctx, snap, 0, "f", "c"))


def test_removing_a_competitor_changes_the_backlog():
    two = net([port("a", rate=10.0), port("b", rate=10.0), port("c", rate=10.0)],
              [FlowSpec("f", 0, ("a", "c"), 1.0, 20.0), FlowSpec("g", 0, ("b", "c"), 1.0, 20.0)])
    one = net(two.nodes, two.flows[:1])
    ctx2, snap2 = fluid(two)
    ctx1, snap1 = fluid(one)
    assert plp_backlog_single(ctx2, snap2, 0, "f", "c") > plp_backlog_single(ctx1, snap1, 0, "f", "c") + 1e-6


TWO = NodeConfig("v", 100.0, 1.0, (200.0, 200.0), (100.0, 100.0), 1.0)


def test_iplp_uses_first_round_cap():
    spec = net([TWO], [FlowSpec("f", 0, ("v",), 1.0, 50.0)], ("c0", "c1"))
    ctx, snap = fluid(spec)
    convex = plp_delay(ctx, snap, 0, "f")
    assert convex == pytest.approx(3.99 + 50 / (101 / 301 * 100), abs=1e-6)
    assert convex == pytest.approx(5.48, abs=5e-3)
    assert iplp_delay(ctx, snap, 0, "f") == pytest.approx(4.49, abs=1e-6)


def test_iplp_equals_plp_far_above_cap():
    spec = net([TWO], [FlowSpec("f", 0, ("v",), 1.0, 1010.0)], ("c0", "c1"))
    ctx, snap = fluid(spec)
    assert iplp_delay(ctx, snap, 0, "f") == pytest.approx(plp_delay(ctx, snap, 0, "f"), rel=1e-9)


def test_iplp_binary_count_on_two_nodes():
    nodes = [NodeConfig(n, 100.0, 1.0, (200.0, 200.0), (100.0, 100.0), 1.0) for n in ("a", "b")]
    ctx, snap = fluid(net(nodes, [FlowSpec("f", 0, ("a", "b"), 1.0, 50.0)], ("c0", "c1")))
    p, _ = delay_program(ctx, snap, 0, "f", nonconvex=True)
    assert len(p.binaries) == 2
    assert iplp_delay(ctx, snap, 0, "f") <= plp_delay(ctx, snap, 0, "f") + 1e-9


def two_node_cycle(rate):
    nodes = [port("a", rate=100.0, latency=1.0), port("b", rate=100.0, latency=1.0)]
    flows = [FlowSpec("f", 0, ("a", "b"), rate, 50.0), FlowSpec("g", 0, ("b", "a"), rate, 50.0)]
    return net(nodes, flows)


def test_fixed_point_finite_when_stable():
    ctx, snap = fluid(two_node_cycle(10.0))
    assert ctx.forests[0].transit_segments
    z = fp_plp(ctx, snap, 0)
    assert z and all(math.isfinite(v) and v >= 50.0 for v in z.values())


def test_fixed_point_unbounded_when_overloaded():
    ctx, snap = fluid(two_node_cycle(60.0))
    z = fp_plp(ctx, snap, 0)
    assert z and all(math.isinf(v) for v in z.values())


def test_fixed_point_empty_without_cuts():
    ctx, snap = fluid(net([port("a"), port("b")], [FlowSpec("f", 0, ("a", "b"), 0.5, 10.0)]))
    assert fp_plp(ctx, snap, 0) == {}


def test_toy_plp_never_worse_than_tfa():
    spec = load_spec(TOY)
    ctx = AnalysisContext(spec)
    ip = initial_phase(ctx)
    tfa = tfa_end_to_end(ctx, ip.delay)
    for f in spec.flows:
        plp = end_to_end(ctx, ip.snapshot, f.id, nonconvex=False)
        iplp = end_to_end(ctx, ip.snapshot, f.id, nonconvex=True)
        assert iplp <= plp + 1e-6 <= tfa[f.id] + 2e-6
    for (v, c), b in ip.snapshot.b_node.items():
        assert backlog_node(ctx, ip.snapshot, v, c) <= b + 1e-6
    for (c, e), b in ip.snapshot.b_edge.items():
        assert backlog_edge(ctx, ip.snapshot, c, e) <= b + 1e-6


def test_fixed_point_on_toy_improves_tfa_cut_burst():
    ctx = AnalysisContext(load_spec(TOY))
    ip = initial_phase(ctx)
    z = fp_plp(ctx, ip.snapshot, 0)
    for sid, val in z.items():
        assert val <= ip.snapshot.zcut[(0, sid)] + 1e-6


def test_lp_export_matches_golden_file():
    ctx, snap = fluid(net([port("v")], [FlowSpec("f", 0, ("v",), 1.0, 10.0)]))
    p, _ = delay_program(ctx, snap, 0, "f")
    assert export_lp(p) == (GOLDEN / "plp_delay_single.lp").read_text()


def toy_programs():
    ctx = AnalysisContext(load_spec(TOY))
    snap = initial_phase(ctx).snapshot
    progs = []
    for f in ctx.spec.flows:
        for s in ctx.forests[f.cls].segments_of(f.id):
            progs.append(delay_program(ctx, snap, f.cls, s.id, nonconvex=False)[0])
            progs.append(delay_program(ctx, snap, f.cls, s.id, nonconvex=True)[0])
    for c in ctx.classes:
        for v in ctx.graphs[c].vertices:
            built = backlog_program(ctx, snap, c, v, [s.id for s in ctx.forests[c].subtree(v).segments_at(v)],
                                    f"backlog_{c}_{v}")
            progs.append(built[0])
        if ctx.forests[c].transit_segments:
            progs.append(fp_program(ctx, snap, c)[0])
    return progs


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_exported_programs_round_trip_through_external_solver(tmp_path, backend):
    highspy = pytest.importorskip("highspy")
    for p in toy_programs():
        ours = (solve_milp_enum(p, backend) if p.binaries else solve_lp(p, backend)).objective
        path = tmp_path / f"{p.name}.lp"
        path.write_text(export_lp(p))
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        # binaries guard big-M rows, so integrality slack must be far below 1 / M
        h.setOptionValue("mip_feasibility_tolerance", 1e-9)
        h.readModel(str(path))
        h.run()
        theirs = h.getInfo().objective_function_value
        assert theirs == pytest.approx(ours, rel=1e-5, abs=1e-9), p.name
