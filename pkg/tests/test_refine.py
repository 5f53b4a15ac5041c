import math
from dataclasses import replace

import pytest

from drrbound.curves import ConvexPWL
from drrbound.model import load_spec
from drrbound.refine import (
    LogRecord,
    Refinement,
    RefinementLog,
    all_refinements,
    audit,
    implementation_1,
    implementation_2,
    run_generic,
    states_agree,
)
from drrbound.state import AnalysisContext, Delta, SharedState, improves, merge, relative_gap
from drrbound.tfa import initial_phase

from test_model import TOY


@pytest.fixture(scope="module")
def toy():
    ctx = AnalysisContext(load_spec(TOY))
    return ctx, initial_phase(ctx)


def test_improves_is_strict_and_handles_infinity():
    assert improves(1.0, 2.0)
    assert not improves(2.0, 1.0)
    assert not improves(1.0, 1.0 + 1e-12)
    assert improves(5.0, math.inf)
    assert not improves(math.inf, math.inf)
    assert not improves(math.nan, 1.0)


def test_merge_keeps_best_values(toy):
    ctx, ip = toy
    snap = ip.snapshot
    key = next(iter(snap.delay))
    worse = Delta(delay={key: snap.delay[key] + 1})
    same, changed = merge(snap, worse)
    assert same is snap and not changed
    better = Delta(delay={key: snap.delay[key] / 2})
    new, changed = merge(snap, better)
    assert new.delay[key] == snap.delay[key] / 2 and new.version == snap.version + 1
    v = next(iter(snap.beta))
    weaker = Delta(beta={v: tuple(ConvexPWL() for _ in snap.beta[v])})
    assert merge(snap, weaker)[1] == []


def test_implementations_reach_the_same_state(toy):
    ctx, ip = toy
    results = [
        implementation_1(ctx, SharedState(ip.snapshot)),
        implementation_2(ctx, SharedState(ip.snapshot)),
    ] + [run_generic(ctx, SharedState(ip.snapshot), seed=s) for s in (1, 2, 3)]
    assert all(r.converged for r in results)
    ref = results[0].snapshot
    for r in results[1:]:
        assert relative_gap(ref, r.snapshot) <= 1e-6
    for r in results:
        rep = audit(r.log, ip.history)
        assert rep.ok, rep.problems[:5]


def test_parallel_workers_agree(toy):
    ctx, ip = toy
    seq = run_generic(ctx, SharedState(ip.snapshot), seed=7)
    par = run_generic(ctx, SharedState(ip.snapshot), seed=7, workers=4)
    assert par.converged and states_agree(seq.snapshot, par.snapshot)
    assert audit(par.log).disjoint


def test_timeout_leaves_a_valid_partial_state(toy):
    ctx, ip = toy
    res = run_generic(ctx, SharedState(ip.snapshot), timeout=0.0)
    assert not res.converged
    assert res.snapshot.delay == ip.snapshot.delay


def test_pass_limit_gives_intermediate_bounds(toy):
    ctx, ip = toy
    full = run_generic(ctx, SharedState(ip.snapshot), seed=1)
    one = run_generic(ctx, SharedState(ip.snapshot), seed=1, max_passes=1)
    assert not one.converged and one.passes == 1
    for k, d in one.snapshot.delay.items():
        assert full.snapshot.delay[k] - 1e-9 <= d <= ip.snapshot.delay[k] + 1e-9


def test_schedule_covers_every_refinement_kind(toy):
    ctx, _ = toy
    kinds = {h.kind for h in all_refinements(ctx)}
    assert kinds == {"fpplp", "backlog_node", "backlog_edge", "drr", "delay"}
    assert str(Refinement("backlog_edge", 1, edge=("a", "b"))) == "backlog_edge:c1:a->b"


def test_auditor_flags_regressions_and_overlaps(toy):
    _, ip = toy
    snap = ip.snapshot
    key = next(iter(snap.delay))
    worse = replace(snap, delay={**snap.delay, key: snap.delay[key] * 2}, version=snap.version + 1)
    log = RefinementLog()
    log.add(LogRecord("delay", 0.0, 1.0, 3.0, snap, worse, [f"delay{key}"]))
    log.add(LogRecord("delay", 0.0, 2.0, 4.0, worse, worse, []))
    rep = audit(log)
    assert not rep.monotone and not rep.disjoint


def test_auditor_flags_shrinking_service_curve(toy):
    _, ip = toy
    snap = ip.snapshot
    v = next(iter(snap.beta))
    weaker = {**snap.beta, v: tuple(ConvexPWL() for _ in snap.beta[v])}
    log = RefinementLog()
    log.add(LogRecord("drr", 0.0, 1.0, 2.0, snap, replace(snap, beta=weaker), []))
    assert not audit(log).monotone


def test_log_dump_has_one_line_per_record(toy, tmp_path):
    ctx, ip = toy
    res = run_generic(ctx, SharedState(ip.snapshot), seed=3)
    out = tmp_path / "trace.txt"
    res.log.dump(str(out))
    lines = out.read_text().splitlines()
    assert len(lines) == len(res.log.records) == res.applied
    assert all("lock=" in ln and "changed=" in ln for ln in lines)
