import math

import numpy as np
import pytest

from drrbound.lp import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    big_m,
    export_lp,
    solve_lp,
    solve_milp_enum,
)

from oracles import lp_vertex_enumeration


def _random_program(rng, trial):
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 11))
    A = rng.integers(-5, 6, (m, n)).astype(float)
    b = rng.integers(-3, 10, m).astype(float)
    c = rng.integers(-5, 6, n).astype(float)
    boxed = trial % 3 == 0
    p = LinearProgram()
    for j in range(n):
        p.var(f"x{j}", -10 if boxed else -math.inf, 10 if boxed else math.inf)
    for i in range(m):
        p.add({j: A[i, j] for j in range(n)}, "<=", b[i])
    p.maximize({j: c[j] for j in range(n)})
    return p, c, A, b, ([(-10, 10)] * n if boxed else None)


@pytest.mark.parametrize("backend", ["simplex", "highs"])
def test_agrees_with_vertex_enumeration(backend):
    rng = np.random.default_rng(0)
    for trial in range(200):
        p, c, A, b, bounds = _random_program(rng, trial)
        status, value = lp_vertex_enumeration(c, A, b, bounds)
        sol = solve_lp(p, backend)
        assert sol.status == status, trial
        if status == OPTIMAL:
            assert sol.objective == pytest.approx(value, rel=1e-6, abs=1e-6), trial
            x = sol.x
            assert np.all(A @ x <= b + 1e-6)


def test_small_examples():
    p = LinearProgram()
    x = p.var("x", 0)
    y = p.var("y", 0)
    p.add({x: 1, y: 1}, "<=", 4)
    p.add({x: 1, y: 3}, "<=", 6)
    p.maximize({x: 3, y: 2})
    assert solve_lp(p).objective == pytest.approx(12)

    q = LinearProgram()
    x = q.var("x", 0)
    q.add({x: 1}, ">=", 1)
    q.maximize({x: 1})
    assert solve_lp(q).status == UNBOUNDED
    assert solve_lp(q).value == math.inf

    r = LinearProgram()
    x = r.var("x", 0)
    r.add({x: 1}, "<=", -1)
    r.maximize({x: 1})
    assert solve_lp(r).status == INFEASIBLE


def test_equality_and_degenerate_rows():
    p = LinearProgram()
    x, y, z = (p.var(n, 0) for n in "xyz")
    p.add({x: 1, y: 1, z: 1}, "=", 3)
    p.add({x: 2, y: 2, z: 2}, "=", 6)  # redundant
    p.add({x: 1}, "<=", 0)
    p.add({y: 1}, "<=", 0)
    p.maximize({z: 1})
    for backend in ("simplex", "highs"):
        assert solve_lp(p, backend).objective == pytest.approx(3)


def _branch_program(rng):
    p = LinearProgram()
    n = 3
    xs = [p.var(f"x{j}", 0, 20) for j in range(n)]
    nb = int(rng.integers(1, 4))
    bs = [p.binary(f"b{k}") for k in range(nb)]
    for _ in range(3):
        p.add({j: float(rng.integers(0, 4)) for j in xs}, "<=", float(rng.integers(5, 30)))
    for k in bs:
        for v in (0, 1):
            coeffs = {j: float(rng.integers(-3, 4)) for j in xs}
            p.add(coeffs, rng.choice(["<=", ">="]), float(rng.integers(-5, 15)), condition=(k, v))
    p.maximize({j: float(rng.integers(1, 5)) for j in xs})
    return p


def _big_m_value(p, assignment, M=1e12):
    """Same branch solved with big-M rows and the binaries pinned."""
    q = LinearProgram(names=list(p.names), lower=list(p.lower), upper=list(p.upper))
    bvars = [q.var(f"bin{k}", a, a) for k, a in enumerate(assignment)]
    for con in p.constraints:
        coeffs = dict(con.coeffs)
        rhs = con.rhs
        if con.condition is not None:
            k, v = con.condition
            sign = -1.0 if con.sense == "<=" else 1.0
            if v == 0:
                coeffs[bvars[k]] = sign * M
            else:
                coeffs[bvars[k]] = -sign * M
                rhs -= sign * M
        q.add(coeffs, con.sense, rhs)
    q.maximize(p.objective)
    return solve_lp(q, "highs")


def test_enumeration_matches_big_m():
    import itertools

    rng = np.random.default_rng(5)
    for _ in range(20):
        p = _branch_program(rng)
        got = solve_milp_enum(p)
        best = None
        for assignment in itertools.product((0, 1), repeat=len(p.binaries)):
            sol = _big_m_value(p, assignment)
            if sol.status == OPTIMAL and (best is None or sol.objective > best):
                best = sol.objective
        if best is None:
            assert got.status == INFEASIBLE
        else:
            assert got.objective == pytest.approx(best, rel=1e-6, abs=1e-5)


def test_export_writes_big_m_rows():
    p = LinearProgram(name="demo")
    x = p.var("t[v1]", 0, 5)
    y = p.var("y free")
    b = p.binary("b0")
    p.add({x: 1, y: -1}, "<=", 2, name="service v1")
    p.add({x: 1}, ">=", 1, condition=(b, 1))
    p.maximize({x: 1, y: 2})
    text = export_lp(p)
    assert text.startswith("\\ demo\nMaximize")
    for section in ("Maximize", "Subject To", "Bounds", "Binaries", "End"):
        assert section in text
    assert "free" in text
    M = big_m(p)
    assert f"{M:g}" in text or repr(M) in text


def test_rejects_undeclared_variable():
    p = LinearProgram()
    p.var("x")
    with pytest.raises(ValueError):
        p.add({3: 1.0}, "<=", 1)
