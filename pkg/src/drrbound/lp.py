"""Linear programs, an embedded simplex solver and MILP by enumeration.

Programs are maximizations over continuous variables with optional bounds.
Binary variables never appear in constraint rows; instead a constraint may be
*conditional* on a binary taking a given value. Solving a program with
binaries enumerates all assignments and keeps, for each, only the
constraints whose condition holds, so no big-M constant ever reaches the
solver. The textual export writes the same program with big-M rows.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11
MAX_BINARIES = 20

OPTIMAL, UNBOUNDED, INFEASIBLE, NUMERICAL = "optimal", "unbounded", "infeasible", "numerical"


class SolverError(RuntimeError):
    """Raised when a solver reports a numerical failure."""


@dataclass
class Constraint:
    coeffs: dict[int, float]
    sense: str  # "<=", ">=", "="
    rhs: float
    name: str = ""
    condition: tuple[int, int] | None = None  # (binary index, required value)


@dataclass
class LinearProgram:
    name: str = "program"
    names: list[str] = field(default_factory=list)
    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    binaries: list[str] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def var(self, name: str, lower: float = -math.inf, upper: float = math.inf) -> int:
        self.names.append(name)
        self.lower.append(lower)
        self.upper.append(upper)
        return len(self.names) - 1

    def binary(self, name: str) -> int:
        self.binaries.append(name)
        return len(self.binaries) - 1

    def add(self, coeffs: dict[int, float], sense: str, rhs: float, name: str = "",
            condition: tuple[int, int] | None = None) -> None:
        if sense not in ("<=", ">=", "="):
            raise ValueError(f"bad constraint sense {sense!r}")
        merged: dict[int, float] = {}
        for j, a in coeffs.items():
            if not 0 <= j < self.n_vars:
                raise ValueError(f"constraint {name!r} references undeclared variable {j}")
            if not math.isfinite(a) or not math.isfinite(rhs):
                raise ValueError(f"constraint {name!r} has a non-finite coefficient")
            if a != 0:
                merged[j] = merged.get(j, 0.0) + a
        if condition is not None and not 0 <= condition[0] < len(self.binaries):
            raise ValueError(f"constraint {name!r} references undeclared binary")
        self.constraints.append(Constraint(merged, sense, float(rhs), name, condition))

    def maximize(self, coeffs: dict[int, float]) -> None:
        self.objective = dict(coeffs)

    def restricted(self, assignment: tuple[int, ...]) -> "LinearProgram":
        """Pure LP obtained by fixing every binary."""
        keep = [
            c for c in self.constraints
            if c.condition is None or assignment[c.condition[0]] == c.condition[1]
        ]
        return LinearProgram(self.name, self.names, self.lower, self.upper,
                             [Constraint(c.coeffs, c.sense, c.rhs, c.name) for c in keep],
                             self.objective, [])

    def dense(self):
        """(c, A_ub, b_ub, A_eq, b_eq) of the unconditional rows."""
        n = self.n_vars
        c = np.zeros(n)
        for j, a in self.objective.items():
            c[j] = a
        ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
        for con in self.constraints:
            if con.condition is not None:
                continue
            row = np.zeros(n)
            for j, a in con.coeffs.items():
                row[j] = a
            if con.sense == "<=":
                ub_rows.append(row); ub_rhs.append(con.rhs)
            elif con.sense == ">=":
                ub_rows.append(-row); ub_rhs.append(-con.rhs)
            else:
                eq_rows.append(row); eq_rhs.append(con.rhs)
        A_ub = np.array(ub_rows).reshape(-1, n)
        A_eq = np.array(eq_rows).reshape(-1, n)
        return c, A_ub, np.array(ub_rhs), A_eq, np.array(eq_rhs)


@dataclass
class Solution:
    status: str
    objective: float = math.nan
    x: np.ndarray | None = None

    @property
    def value(self) -> float:
        """Objective with unbounded mapped to +inf."""
        if self.status == UNBOUNDED:
            return math.inf
        if self.status != OPTIMAL:
            raise SolverError(f"no optimal value: {self.status}")
        return self.objective


def solve_lp(p: LinearProgram, backend: str = "simplex") -> Solution:
    if p.binaries:
        raise ValueError("program has binaries; use solve_milp_enum")
    if backend == "highs":
        return _solve_highs(p)
    if backend != "simplex":
        raise ValueError(f"unknown backend {backend!r}")
    return _solve_simplex(p)


def solve_milp_enum(p: LinearProgram, backend: str = "simplex") -> Solution:
    k = len(p.binaries)
    if k > MAX_BINARIES:
        raise ValueError(f"{k} binaries exceed the enumeration guard of {MAX_BINARIES}")
    if k == 0:
        return solve_lp(p, backend)
    best: Solution | None = None
    for assignment in itertools.product((0, 1), repeat=k):
        sol = solve_lp(p.restricted(assignment), backend)
        if sol.status == UNBOUNDED:
            return sol
        if sol.status == NUMERICAL:
            raise SolverError(f"numerical failure for binaries {assignment}")
        if sol.status == OPTIMAL and (best is None or sol.objective > best.objective):
            best = sol
    return best if best is not None else Solution(INFEASIBLE)


# ---------------------------------------------------------------- simplex

def _standard_form(p: LinearProgram):
    """Map to max c'y s.t. A y (<= or =) b, y >= 0.

    Returns (c, A, b, is_eq, recover) where recover(y) gives x.
    """
    n = p.n_vars
    cols: list[tuple[int, float]] = []  # (original index, sign)
    shift = np.zeros(n)
    extra_rows: list[tuple[int, float]] = []  # (column, upper bound on y)
    for j in range(n):
        lo, hi = p.lower[j], p.upper[j]
        if math.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if math.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif math.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    m_cols = len(cols)
    col_of = np.array([j for j, _ in cols], dtype=int)
    sign_of = np.array([s for _, s in cols])
    c_full = np.zeros(n)
    for j, a in p.objective.items():
        c_full[j] = a
    c = c_full[col_of] * sign_of
    rows, rhs, eq = [], [], []
    for con in p.constraints:
        row = np.zeros(m_cols)
        offset = 0.0
        for j, a in con.coeffs.items():
            offset += a * shift[j]
        for k, (j, s) in enumerate(cols):
            a = con.coeffs.get(j)
            if a:
                row[k] = a * s
        r = con.rhs - offset
        if con.sense == ">=":
            row, r = -row, -r
        rows.append(row)
        rhs.append(r)
        eq.append(con.sense == "=")
    for k, bound in extra_rows:
        row = np.zeros(m_cols)
        row[k] = 1.0
        rows.append(row)
        rhs.append(bound)
        eq.append(False)
    A = np.array(rows).reshape(-1, m_cols)
    b = np.array(rhs)

    def recover(y: np.ndarray) -> np.ndarray:
        x = shift.copy()
        np.add.at(x, col_of, sign_of * y)
        return x

    offset_obj = float(c_full @ shift)
    return c, A, b, np.array(eq, dtype=bool), recover, offset_obj


def _solve_simplex(p: LinearProgram) -> Solution:
    c, A, b, is_eq, recover, offset = _standard_form(p)
    m, n = A.shape
    if m == 0:
        if np.any(c > OPT_TOL):
            return Solution(UNBOUNDED)
        return Solution(OPTIMAL, offset, recover(np.zeros(n)))
    # row scaling keeps pivots well conditioned
    scale = np.maximum(np.abs(A).max(axis=1), np.abs(b))
    scale[scale == 0] = 1.0
    A = A / scale[:, None]
    b = b / scale
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    # slack for inequality rows: +1, or -1 where the row was negated (surplus)
    ineq = np.where(~is_eq)[0]
    slack = np.zeros((m, len(ineq)))
    slack[ineq, np.arange(len(ineq))] = np.where(neg[ineq], -1.0, 1.0)
    # artificial columns where the slack cannot start in the basis
    needs_art = is_eq | neg
    art_rows = np.where(needs_art)[0]
    art = np.zeros((m, len(art_rows)))
    art[art_rows, np.arange(len(art_rows))] = 1.0
    n_s, n_a = len(ineq), len(art_rows)
    T = np.zeros((m + 1, n + n_s + n_a + 1))
    T[:m, :n] = A
    T[:m, n:n + n_s] = slack
    T[:m, n + n_s:n + n_s + n_a] = art
    T[:m, -1] = b
    basis = np.empty(m, dtype=int)
    slack_col = {r: n + k for k, r in enumerate(ineq)}
    art_col = {r: n + n_s + k for k, r in enumerate(art_rows)}
    for r in range(m):
        basis[r] = art_col[r] if needs_art[r] else slack_col[r]
    total = n + n_s + n_a
    if n_a:
        # phase I: maximize -sum(artificials)
        T[m, :] = 0.0
        T[m, n + n_s:total] = 1.0
        for r in art_rows:
            T[m, :] -= T[r, :]
        status = _pivot_loop(T, basis, total)
        if status != OPTIMAL:
            return Solution(NUMERICAL)
        if -T[m, -1] > FEAS_TOL * max(1.0, np.abs(b).max()):
            return Solution(INFEASIBLE)
        # drive remaining artificials out of the basis
        for r in range(m):
            if basis[r] >= n + n_s:
                candidates = np.where(np.abs(T[r, :n + n_s]) > PIVOT_TOL)[0]
                if len(candidates):
                    _pivot(T, basis, r, candidates[0])
        keep_rows = [r for r in range(m) if basis[r] < n + n_s]
        T = np.vstack([T[keep_rows], T[m:m + 1]])
        basis = basis[keep_rows]
        T = np.delete(T, np.s_[n + n_s:total], axis=1)
        m = len(keep_rows)
        total = n + n_s
    # phase II objective row holds reduced costs of "minimize -c"
    T[m, :] = 0.0
    T[m, :n] = -c
    for r in range(m):
        j = basis[r]
        if T[m, j] != 0:
            T[m, :] -= T[m, j] * T[r, :]
    status = _pivot_loop(T, basis, total)
    if status == UNBOUNDED:
        return Solution(UNBOUNDED)
    if status != OPTIMAL:
        return Solution(NUMERICAL)
    y = np.zeros(total)
    y[basis] = T[:m, -1]
    x = recover(y[:n])
    return Solution(OPTIMAL, float(T[m, -1]) + offset, x)


def _pivot(T: np.ndarray, basis: np.ndarray, r: int, j: int) -> None:
    T[r, :] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r, :])
    basis[r] = j


def _pivot_loop(T: np.ndarray, basis: np.ndarray, total: int, max_iter: int = 50000) -> str:
    m = T.shape[0] - 1
    bland = False
    stall = 0
    for _ in range(max_iter):
        reduced = T[m, :total]
        if bland:
            candidates = np.where(reduced < -OPT_TOL)[0]
            if not len(candidates):
                return OPTIMAL
            j = int(candidates[0])
        else:
            j = int(np.argmin(reduced))
            if reduced[j] >= -OPT_TOL:
                return OPTIMAL
        col = T[:m, j]
        pos = col > PIVOT_TOL
        if not np.any(pos):
            return UNBOUNDED
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.where(ratios <= best + 1e-12 * max(1.0, abs(best)))[0]
        r = int(ties[np.argmin(basis[ties])])
        if best <= 1e-12:
            stall += 1
            if stall > 50:
                bland = True
        else:
            stall = 0
            bland = False
        _pivot(T, basis, r, j)
    return NUMERICAL


# ---------------------------------------------------------------- HiGHS

def _solve_highs(p: LinearProgram) -> Solution:
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix

    n = p.n_vars
    c = np.zeros(n)
    for j, a in p.objective.items():
        c[j] = -a
    ub_i, ub_j, ub_v, ub_b = [], [], [], []
    eq_i, eq_j, eq_v, eq_b = [], [], [], []
    for con in p.constraints:
        sign = -1.0 if con.sense == ">=" else 1.0
        if con.sense == "=":
            r = len(eq_b)
            for j, a in con.coeffs.items():
                eq_i.append(r); eq_j.append(j); eq_v.append(a)
            eq_b.append(con.rhs)
        else:
            r = len(ub_b)
            for j, a in con.coeffs.items():
                ub_i.append(r); ub_j.append(j); ub_v.append(sign * a)
            ub_b.append(sign * con.rhs)
    A_ub = coo_matrix((ub_v, (ub_i, ub_j)), shape=(len(ub_b), n)).tocsr() if ub_b else None
    A_eq = coo_matrix((eq_v, (eq_i, eq_j)), shape=(len(eq_b), n)).tocsr() if eq_b else None
    bounds = [(None if not math.isfinite(lo) else lo, None if not math.isfinite(hi) else hi)
              for lo, hi in zip(p.lower, p.upper)]
    kwargs = dict(A_ub=A_ub, b_ub=ub_b or None, A_eq=A_eq, b_eq=eq_b or None,
                  bounds=bounds, method="highs")
    res = linprog(c, **kwargs)
    if res.status == 0:
        return Solution(OPTIMAL, float(-res.fun), np.asarray(res.x))
    if res.status == 3:
        return Solution(UNBOUNDED)
    if res.status == 2:
        # HiGHS may report "infeasible or unbounded"; settle it with a feasibility solve
        feas = linprog(np.zeros(n), **kwargs)
        return Solution(UNBOUNDED if feas.status == 0 else INFEASIBLE)
    return Solution(NUMERICAL)


# ---------------------------------------------------------------- export

_NAME_OK = re.compile(r"[^A-Za-z0-9_.]")


def _lp_name(name: str, used: set[str]) -> str:
    out = _NAME_OK.sub("_", name)
    if not out or out[0].isdigit() or out[0] == ".":
        out = "v_" + out
    base, k = out, 1
    while out in used:
        k += 1
        out = f"{base}_{k}"
    used.add(out)
    return out


def big_m(p: LinearProgram) -> float:
    """Heuristic M for the exported MILP form: 1e3 * (1 + largest |rhs|) * (1 + largest |coefficient|).

    Right-hand sides carry bursts and rate * latency terms, coefficients carry
    rates, so this dominates any slack a feasible point can need.
    """
    rhs = max([abs(c.rhs) for c in p.constraints] + [0.0])
    coef = max([abs(a) for c in p.constraints for a in c.coeffs.values()] + [0.0])
    return 1e3 * (1.0 + rhs) * (1.0 + coef)


def export_lp(p: LinearProgram) -> str:
    """CPLEX LP text; conditional rows become big-M rows on their binary."""
    used: set[str] = set()
    var = [_lp_name(nm, used) for nm in p.names]
    bins = [_lp_name(nm, used) for nm in p.binaries]
    M = big_m(p) if p.binaries else 0.0

    def expr(coeffs: dict[int, float], extra: list[tuple[float, str]] = ()) -> str:
        terms = [(a, var[j]) for j, a in sorted(coeffs.items())] + list(extra)
        if not terms:
            return "0 " + (var[0] if var else bins[0] if bins else "")
        parts = []
        for k, (a, nm) in enumerate(terms):
            sign = "-" if a < 0 else "+"
            mag = repr(abs(float(a)))
            if k == 0:
                parts.append(f"{'-' if a < 0 else ''}{mag} {nm}")
            else:
                parts.append(f"{sign} {mag} {nm}")
        return " ".join(parts)

    lines = [f"\\ {p.name}", "Maximize"]
    lines.append(f" obj: {expr(p.objective) if p.objective else '0 ' + (var[0] if var else '')}".rstrip())
    lines.append("Subject To")
    for k, con in enumerate(p.constraints):
        name = _lp_name(con.name or f"c{k}", used)
        extra: list[tuple[float, str]] = []
        rhs = con.rhs
        if con.condition is not None:
            b, value = con.condition
            # active when binary == value; relax by M otherwise
            if con.sense == "=":
                raise ValueError("conditional equalities are not supported")
            sign = -1.0 if con.sense == "<=" else 1.0
            if value == 0:
                extra.append((sign * M, bins[b]))  # <=: a x - M b <= rhs
            else:
                extra.append((-sign * M, bins[b]))
                rhs = rhs - sign * M
        lines.append(f" {name}: {expr(con.coeffs, extra)} {con.sense} {repr(float(rhs))}")
    lines.append("Bounds")
    for j, nm in enumerate(var):
        lo, hi = p.lower[j], p.upper[j]
        if not math.isfinite(lo) and not math.isfinite(hi):
            lines.append(f" {nm} free")
        else:
            los = repr(float(lo)) if math.isfinite(lo) else "-inf"
            his = repr(float(hi)) if math.isfinite(hi) else "+inf"
            lines.append(f" {los} <= {nm} <= {his}")
    if bins:
        lines.append("Binaries")
        lines.extend(f" {nm}" for nm in bins)
    lines.append("End")
    return "\n".join(lines) + "\n"
