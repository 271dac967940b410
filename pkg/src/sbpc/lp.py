"""Linear programming layer: a dense bounded revised simplex with dual prices.

The solver works on ``min c'x  s.t.  A x (<=,=,>=) b,  l <= x <= u``.  Each row
gets a logical variable ``s`` with ``A x + s = b``; its bounds encode the row
sense (``<=``: s >= 0, ``>=``: s <= 0, ``=``: s = 0), so the all-logical basis
is always available as a starting point.  Phase 1 minimises the sum of bound
violations of the basic variables, phase 2 the true objective.  Dual prices
follow the minimisation convention: ``<=`` rows have duals <= 0 and ``>=`` rows
duals >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

__all__ = [
    "LinearProgram",
    "LpSolution",
    "Basis",
    "solve_lp",
    "solve_lp_highs",
    "write_lp",
    "FEAS_TOL",
    "DUAL_TOL",
    "NEG_RC_TOL",
]

FEAS_TOL = 1e-9
DUAL_TOL = 1e-9
NEG_RC_TOL = -1e-6

BASIC, AT_LOWER, AT_UPPER, AT_ZERO = 0, 1, 2, 3
_SENSES = ("<=", ">=", "=")


@dataclass
class LinearProgram:
    """Sparse row/column LP container that supports incremental growth."""

    n_rows: int = 0
    costs: list = field(default_factory=list)
    col_rows: list = field(default_factory=list)
    col_vals: list = field(default_factory=list)
    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    senses: list = field(default_factory=list)
    rhs: list = field(default_factory=list)

    @property
    def n_cols(self) -> int:
        return len(self.costs)

    def add_row(self, sense: str, rhs: float, entries: dict | None = None) -> int:
        """Append a row; ``entries`` maps existing column index -> coefficient."""
        if sense not in _SENSES:
            raise ValueError(f"bad row sense {sense!r}")
        if not math.isfinite(rhs):
            raise ValueError("rhs must be finite")
        r = self.n_rows
        self.n_rows += 1
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        for j, v in (entries or {}).items():
            if not 0 <= j < self.n_cols:
                raise IndexError(f"row references unknown column {j}")
            if v != 0:
                self.col_rows[j] = np.append(self.col_rows[j], r)
                self.col_vals[j] = np.append(self.col_vals[j], float(v))
        return r

    def add_column(self, cost: float, entries: dict, lower: float = 0.0, upper: float = math.inf) -> int:
        """Append a column; ``entries`` maps row index -> coefficient."""
        rows = np.fromiter(entries.keys(), dtype=np.int64, count=len(entries))
        vals = np.fromiter(entries.values(), dtype=np.float64, count=len(entries))
        if rows.size and (rows.min() < 0 or rows.max() >= self.n_rows):
            raise IndexError("column references an unknown row")
        keep = vals != 0
        self.costs.append(float(cost))
        self.col_rows.append(rows[keep])
        self.col_vals.append(vals[keep])
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        return self.n_cols - 1

    def dense(self) -> np.ndarray:
        A = np.zeros((self.n_rows, self.n_cols))
        for j, (r, v) in enumerate(zip(self.col_rows, self.col_vals)):
            A[r, j] = v
        return A

    def subset(self, keep_cols: Sequence[int]) -> "LinearProgram":
        """Copy with only the listed columns (all rows kept)."""
        out = LinearProgram(self.n_rows, senses=list(self.senses), rhs=list(self.rhs))
        for j in keep_cols:
            out.costs.append(self.costs[j])
            out.col_rows.append(self.col_rows[j])
            out.col_vals.append(self.col_vals[j])
            out.lower.append(self.lower[j])
            out.upper.append(self.upper[j])
        return out

    def copy(self) -> "LinearProgram":
        return self.subset(range(self.n_cols))


@dataclass
class Basis:
    """Status per structural column and per row logical."""

    cols: np.ndarray
    rows: np.ndarray

    def extended(self, n_cols: int, n_rows: int) -> "Basis":
        """Basis for an LP grown by trailing columns (nonbasic) and rows (logical basic)."""
        cols = np.concatenate([self.cols, np.full(n_cols - self.cols.size, AT_LOWER, dtype=np.int8)])
        rows = np.concatenate([self.rows, np.full(n_rows - self.rows.size, BASIC, dtype=np.int8)])
        return Basis(cols, rows)

    def restricted(self, keep_cols: Sequence[int]) -> "Basis":
        return Basis(self.cols[np.asarray(keep_cols, dtype=np.int64)].copy(), self.rows.copy())


@dataclass
class LpSolution:
    status: str
    objective: float
    primal: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    basis: Basis | None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _logical_bounds(senses):
    lo = np.empty(len(senses))
    up = np.empty(len(senses))
    for i, s in enumerate(senses):
        if s == "<=":
            lo[i], up[i] = 0.0, math.inf
        elif s == ">=":
            lo[i], up[i] = -math.inf, 0.0
        else:
            lo[i], up[i] = 0.0, 0.0
    return lo, up


def _nonbasic_status(lo, up):
    if math.isfinite(lo):
        return AT_LOWER
    if math.isfinite(up):
        return AT_UPPER
    return AT_ZERO


class _Simplex:
    def __init__(self, lp: LinearProgram, basis: Basis | None, max_iter: int):
        m, n = lp.n_rows, lp.n_cols
        self.m, self.n = m, n
        self.A = np.hstack([lp.dense(), np.eye(m)]) if m else np.zeros((0, n))
        self.b = np.asarray(lp.rhs, dtype=np.float64)
        self.c = np.concatenate([np.asarray(lp.costs, dtype=np.float64), np.zeros(m)])
        llo, lup = _logical_bounds(lp.senses)
        self.lo = np.concatenate([np.asarray(lp.lower, dtype=np.float64), llo])
        self.up = np.concatenate([np.asarray(lp.upper, dtype=np.float64), lup])
        self.max_iter = max_iter
        self.scale = max(1.0, float(np.abs(self.c).max()) if self.c.size else 1.0)
        # capped so that columns priced at -1e-6 are never judged optimal
        self.dtol = min(DUAL_TOL * self.scale, 1e-7)
        self.status = np.empty(n + m, dtype=np.int8)
        if basis is not None and basis.cols.size == n and basis.rows.size == m:
            self.status[:n] = basis.cols
            self.status[n:] = basis.rows
            if not self._basis_ok():
                self._slack_basis()
        else:
            self._slack_basis()
        self._fix_nonbasic_status()

    def _slack_basis(self):
        n = self.n
        for j in range(n):
            self.status[j] = _nonbasic_status(self.lo[j], self.up[j])
        self.status[n:] = BASIC

    def _fix_nonbasic_status(self):
        for j in np.flatnonzero(self.status != BASIC):
            s = self.status[j]
            if (s == AT_LOWER and not math.isfinite(self.lo[j])) or (
                s == AT_UPPER and not math.isfinite(self.up[j])
            ) or s == AT_ZERO:
                self.status[j] = _nonbasic_status(self.lo[j], self.up[j])

    def _basis_ok(self) -> bool:
        basic = np.flatnonzero(self.status == BASIC)
        for j in basic[self.m :]:
            self.status[j] = _nonbasic_status(self.lo[j], self.up[j])
        missing = self.m - min(basic.size, self.m)
        for i in range(self.m):
            if missing == 0:
                break
            if self.status[self.n + i] != BASIC:
                self.status[self.n + i] = BASIC
                missing -= 1
        basic = np.flatnonzero(self.status == BASIC)
        return basic.size == self.m and np.linalg.matrix_rank(self.A[:, basic]) == self.m

    def _nonbasic_values(self):
        x = np.zeros(self.n + self.m)
        st = self.status
        x[st == AT_LOWER] = self.lo[st == AT_LOWER]
        x[st == AT_UPPER] = self.up[st == AT_UPPER]
        return x

    def run(self):
        m = self.m
        it = 0
        stall = 0
        bland = False
        last_obj = math.inf
        last_phase = None
        while True:
            basic = np.flatnonzero(self.status == BASIC)
            x = self._nonbasic_values()
            if m:
                lu = sla.lu_factor(self.A[:, basic])
                xb = sla.lu_solve(lu, self.b - self.A @ x)
            else:
                xb = np.zeros(0)
            x[basic] = xb
            lo_b, up_b = self.lo[basic], self.up[basic]
            below = xb < lo_b - FEAS_TOL
            above = xb > up_b + FEAS_TOL
            phase1 = bool(below.any() or above.any())
            if phase1:
                cb = np.where(below, -1.0, np.where(above, 1.0, 0.0))
                cost = np.zeros(self.n + m)
                dtol = DUAL_TOL
                obj = float(np.sum(lo_b[below] - xb[below]) + np.sum(xb[above] - up_b[above]))
            else:
                cb = self.c[basic]
                cost = self.c
                dtol = self.dtol
                obj = float(self.c @ x)
            if phase1 != last_phase:
                last_phase, last_obj, stall, bland = phase1, math.inf, 0, False
            y = sla.lu_solve(lu, cb, trans=1) if m else np.zeros(0)
            d = cost - self.A.T @ y
            d[basic] = 0.0

            st = self.status
            can_up = (st != BASIC) & (x < self.up - FEAS_TOL) & (d < -dtol)
            can_dn = (st != BASIC) & (x > self.lo + FEAS_TOL) & (d > dtol)
            cand = np.flatnonzero(can_up | can_dn)
            if cand.size == 0:
                if phase1:
                    return "infeasible", x, y, d, it
                return "optimal", x, y, d, it
            if it >= self.max_iter:
                return "iteration_limit", x, y, d, it

            if obj < last_obj - 1e-12 * max(1.0, abs(obj)):
                last_obj = obj
                stall = 0
                bland = False
            else:
                stall += 1
                if stall > 10 * max(m, 1):
                    bland = True
            q = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if can_up[q] else -1.0
            w = sla.lu_solve(lu, self.A[:, q]) if m else np.zeros(0)
            # basic values move as xb - direction * t * w
            delta = direction * w
            t_best = self.up[q] - self.lo[q]
            leave = -1
            leave_to = 0
            piv = 0.0
            for r in np.flatnonzero(np.abs(delta) > 1e-11):
                dr = delta[r]
                v = xb[r]
                if dr > 0:  # decreasing
                    if above[r]:
                        t = (v - up_b[r]) / dr
                        bnd = AT_UPPER
                    elif math.isfinite(lo_b[r]) and not below[r]:
                        t = (v - lo_b[r]) / dr
                        bnd = AT_LOWER
                    else:
                        continue
                else:
                    if below[r]:
                        t = (v - lo_b[r]) / dr
                        bnd = AT_LOWER
                    elif math.isfinite(up_b[r]) and not above[r]:
                        t = (v - up_b[r]) / dr
                        bnd = AT_UPPER
                    else:
                        continue
                t = max(t, 0.0)
                better = t < t_best - 1e-12 or (
                    t <= t_best + 1e-12
                    and leave >= 0
                    and (
                        (bland and basic[r] < basic[leave])
                        or (not bland and abs(dr) > abs(piv))
                    )
                )
                if better:
                    t_best, leave, leave_to, piv = t, r, bnd, dr
            it += 1
            if leave < 0:
                if not math.isfinite(t_best):
                    if phase1:
                        # cannot happen for a bounded infeasibility measure
                        raise RuntimeError("phase 1 ray")
                    return "unbounded", x, y, d, it
                self.status[q] = AT_UPPER if direction > 0 else AT_LOWER
                continue
            out = basic[leave]
            self.status[out] = leave_to
            self.status[q] = BASIC


def solve_lp(lp: LinearProgram, warm_basis: Basis | None = None, max_iter: int = 50000) -> LpSolution:
    """Solve ``lp`` to optimality (or report infeasible/unbounded).

    ``warm_basis`` may come from a previous solve of the same LP or of one
    that has since grown by trailing rows/columns (see :meth:`Basis.extended`).
    """
    sx = _Simplex(lp, warm_basis, max_iter)
    status, x, y, d, it = sx.run()
    n = lp.n_cols
    basis = Basis(sx.status[:n].copy(), sx.status[n:].copy())
    if status != "optimal":
        return LpSolution(status, math.nan, x[:n], y, d[:n], basis, it)
    return LpSolution(status, float(sx.c[:n] @ x[:n]), x[:n].copy(), y, d[:n].copy(), basis, it)


def solve_lp_highs(lp: LinearProgram) -> LpSolution:
    """Adapter to SciPy's HiGHS; used as an independent cross-check."""
    from scipy.optimize import linprog

    A = lp.dense()
    senses = np.asarray(lp.senses)
    b = np.asarray(lp.rhs, dtype=np.float64)
    le = senses == "<="
    ge = senses == ">="
    eq = senses == "="
    A_ub = np.vstack([A[le], -A[ge]])
    b_ub = np.concatenate([b[le], -b[ge]])
    res = linprog(
        np.asarray(lp.costs),
        A_ub=A_ub if A_ub.size else None,
        b_ub=b_ub if A_ub.size else None,
        A_eq=A[eq] if eq.any() else None,
        b_eq=b[eq] if eq.any() else None,
        bounds=list(zip(lp.lower, [None if math.isinf(u) else u for u in lp.upper])),
        method="highs",
    )
    if res.status == 2:
        return LpSolution("infeasible", math.nan, np.zeros(lp.n_cols), np.zeros(lp.n_rows), np.zeros(lp.n_cols), None)
    if res.status == 3:
        return LpSolution("unbounded", math.nan, np.zeros(lp.n_cols), np.zeros(lp.n_rows), np.zeros(lp.n_cols), None)
    y = np.zeros(lp.n_rows)
    nle = int(le.sum())
    if A_ub.size:
        y[np.flatnonzero(le)] = res.ineqlin.marginals[:nle]
        y[np.flatnonzero(ge)] = -res.ineqlin.marginals[nle:]
    if eq.any():
        y[np.flatnonzero(eq)] = res.eqlin.marginals
    d = np.asarray(lp.costs) - A.T @ y
    return LpSolution("optimal", float(res.fun), res.x, y, d, None)


def write_lp(lp: LinearProgram, col_names: Sequence[str] | None = None, row_names: Sequence[str] | None = None) -> str:
    """Render ``lp`` in CPLEX LP file syntax."""
    cn = list(col_names) if col_names else [f"x{j}" for j in range(lp.n_cols)]
    rn = list(row_names) if row_names else [f"r{i}" for i in range(lp.n_rows)]

    def term(v, name, first):
        sign = "-" if v < 0 else ("" if first else "+")
        return f"{sign} {float(abs(v))!r} {name}".strip()

    rows: list[list[str]] = [[] for _ in range(lp.n_rows)]
    for j, (r, v) in enumerate(zip(lp.col_rows, lp.col_vals)):
        for i, a in zip(r, v):
            rows[i].append(term(a, cn[j], not rows[i]))
    obj = [term(c, cn[j], k == 0) for k, (j, c) in enumerate((j, c) for j, c in enumerate(lp.costs))]
    out = ["Minimize", " obj: " + (" ".join(obj) if obj else "0"), "Subject To"]
    for i in range(lp.n_rows):
        lhs = " ".join(rows[i]) if rows[i] else "0 " + (cn[0] if cn else "x0")
        out.append(f" {rn[i]}: {lhs} {lp.senses[i]} {lp.rhs[i]!r}")
    out.append("Bounds")
    for j in range(lp.n_cols):
        lo, up = lp.lower[j], lp.upper[j]
        if math.isinf(up):
            out.append(f" {cn[j]} >= {lo!r}" if lo != 0 else f" 0 <= {cn[j]}")
        else:
            out.append(f" {lo!r} <= {cn[j]} <= {up!r}")
    out.append("End")
    return "\n".join(out) + "\n"
