"""Set-partitioning restricted master problem, cut pools and the cut/price loop.

Rows of the master LP, in order: one ``=1`` row per customer, an optional
``<= m`` fleet row, then cut rows in the order the cuts entered the pool
(rounded capacity cuts are ``>=`` rows, subset-row cuts ``<= 1`` rows).
Artificial columns (one per customer, big cost, no arcs) keep every
restricted master feasible; a relaxation that still uses one at convergence
signals an infeasible node.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .instance import StochasticInstance
from .lp import AT_LOWER, Basis, LinearProgram, LpSolution, solve_lp, write_lp
from .restocking import check_route, route_cost_or

__all__ = [
    "Column",
    "CutPool",
    "DualPrices",
    "MasterProblem",
    "RelaxationConfig",
    "RelaxationResult",
    "zeta",
    "rcc_rhs",
    "separate_rcc",
    "separate_src",
    "solve_relaxation",
    "arc_flows",
]

log = logging.getLogger(__name__)

VIOL_TOL = 1e-6


@dataclass(frozen=True)
class Column:
    """A route with its optimal-restocking cost and arc incidence."""

    route: tuple
    cost: float
    visits: frozenset
    arcs: tuple

    @classmethod
    def from_route(cls, inst: StochasticInstance, route: Sequence[int], cost: float | None = None) -> "Column":
        r = tuple(int(v) for v in check_route(inst, route))
        if not inst.is_load_feasible(r):
            raise ValueError(f"route {r} exceeds the load limit f*Q")
        if cost is None:
            cost = route_cost_or(inst, r)
        path = (0,) + r + (0,)
        return cls(r, float(cost), frozenset(r), tuple(zip(path[:-1], path[1:])))

    def uses_all(self, allowed: np.ndarray) -> bool:
        return all(allowed[i, j] for i, j in self.arcs)


def rcc_rhs(inst: StochasticInstance, S: Iterable[int]) -> int:
    return int(math.ceil(sum(inst.expected[i] for i in S) / inst.max_load - 1e-9))


@dataclass
class CutPool:
    """Rounded capacity cuts (customer sets) and subset-row cuts (triplets)."""

    rccs: list = field(default_factory=list)
    rcc_rhs: list = field(default_factory=list)
    srcs: list = field(default_factory=list)
    order: list = field(default_factory=list)

    def add_rcc(self, S: Iterable[int], rhs: int) -> bool:
        key = frozenset(int(i) for i in S)
        if not key or key in self.rccs:
            return False
        self.rccs.append(key)
        self.rcc_rhs.append(int(rhs))
        self.order.append(("rcc", len(self.rccs) - 1))
        return True

    def add_src(self, triplet: Iterable[int]) -> bool:
        key = tuple(sorted(int(i) for i in triplet))
        if len(set(key)) != 3:
            raise ValueError("subset-row cuts are defined on exactly three customers")
        if key in self.srcs:
            return False
        self.srcs.append(key)
        self.order.append(("src", len(self.srcs) - 1))
        return True

    def copy(self) -> "CutPool":
        return CutPool(list(self.rccs), list(self.rcc_rhs), list(self.srcs), list(self.order))

    def rcc_membership(self, n: int) -> np.ndarray:
        mem = np.zeros((len(self.rccs), n + 1), dtype=bool)
        for k, S in enumerate(self.rccs):
            mem[k, list(S)] = True
        return mem


@dataclass
class DualPrices:
    alpha: np.ndarray
    beta: float = 0.0
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def zeros(cls, n: int, pool: CutPool | None = None) -> "DualPrices":
        pool = pool or CutPool()
        return cls(np.zeros(n + 1), 0.0, np.zeros(len(pool.rccs)), np.zeros(len(pool.srcs)))


def _exit_count(arcs, S) -> int:
    return sum(1 for i, j in arcs if i in S and j not in S)


def zeta(route: Sequence[int], duals: DualPrices, pool: CutPool) -> float:
    """Dual contribution to the reduced cost of ``route``."""
    r = tuple(route)
    path = (0,) + r + (0,)
    arcs = list(zip(path[:-1], path[1:]))
    total = float(sum(duals.alpha[i] for i in r)) + duals.beta
    for S, g in zip(pool.rccs, duals.gamma):
        if g != 0.0:
            total += g * _exit_count(arcs, S)
    rs = set(r)
    for T, d in zip(pool.srcs, duals.delta):
        if d != 0.0:
            total += d * (sum(1 for i in T if i in rs) // 2)
    return total


def arc_flows(columns: Sequence[Column], values: Sequence[float], n: int) -> np.ndarray:
    x = np.zeros((n + 1, n + 1))
    for col, z in zip(columns, values):
        if z > 1e-12:
            for i, j in col.arcs:
                x[i, j] += z
    return x


def _rcc_violation(flows: np.ndarray, inst: StochasticInstance, S: set) -> float:
    idx = np.fromiter(S, dtype=np.int64)
    out = np.ones(inst.n + 1, dtype=bool)
    out[idx] = False
    lhs = flows[np.ix_(idx, out)].sum()
    return rcc_rhs(inst, S) - lhs


def _components(adj: np.ndarray, nodes: Sequence[int]) -> list[set]:
    seen = set()
    comps = []
    for s in nodes:
        if s in seen:
            continue
        comp = {s}
        stack = [s]
        seen.add(s)
        while stack:
            u = stack.pop()
            for w in np.flatnonzero(adj[u]):
                w = int(w)
                if w not in seen and w != 0:
                    seen.add(w)
                    comp.add(w)
                    stack.append(w)
        comps.append(comp)
    return comps


def separate_rcc(
    flows: np.ndarray,
    inst: StochasticInstance,
    thresholds: Sequence[float] = (1e-6, 0.01, 0.1, 0.25, 0.5, 0.75, 0.99),
    max_cuts: int = 50,
) -> list[tuple[frozenset, float]]:
    """Heuristic search for violated rounded capacity cuts.

    Candidates are connected components of the customer support graph at
    several edge thresholds, each then improved greedily by adding or removing
    one customer at a time.  Returns ``(S, violation)`` pairs, most violated first.
    """
    n = inst.n
    x = np.asarray(flows, dtype=np.float64)
    und = x + x.T
    custs = list(range(1, n + 1))
    candidates: set[frozenset] = set()
    for thr in thresholds:
        adj = und >= thr
        adj[0, :] = False
        adj[:, 0] = False
        for comp in _components(adj, custs):
            candidates.add(frozenset(comp))
    found: dict[frozenset, float] = {}
    for S0 in sorted(candidates, key=lambda s: (len(s), sorted(s))):
        S = set(S0)
        best = _rcc_violation(x, inst, S)
        improved = True
        steps = 0
        while improved and steps < 2 * n:
            improved = False
            steps += 1
            move = None
            for k in custs:
                T = S - {k} if k in S else S | {k}
                if not T:
                    continue
                v = _rcc_violation(x, inst, T)
                if v > best + 1e-9:
                    best, move = v, T
            if move is not None:
                S = move
                improved = True
        if best > VIOL_TOL:
            key = frozenset(S)
            found[key] = max(found.get(key, -math.inf), best)
        v0 = _rcc_violation(x, inst, set(S0))
        if v0 > VIOL_TOL:
            found[S0] = v0
    out = sorted(found.items(), key=lambda kv: (-kv[1], len(kv[0]), sorted(kv[0])))
    return out[:max_cuts]


def separate_src(values: Sequence[float], columns: Sequence[Column], n: int | None = None, chunk: int = 200_000):
    """Enumerate all customer triplets and return violated subset-row cuts.

    Returns ``(triplet, lhs - 1)`` pairs sorted by violation, largest first.
    Only columns at positive value enter the left-hand side.
    """
    z = np.asarray(values, dtype=np.float64)
    frac = [k for k in range(len(columns)) if z[k] > 1e-9]
    if not frac:
        return []
    # a violated triplet needs two members in some positive column; its third
    # member can be any customer
    if n is None:
        n = max(max(c.visits) for c in columns)
    custs = list(range(1, n + 1))
    if len(custs) < 3:
        return []
    pos = {c: t for t, c in enumerate(custs)}
    B = np.zeros((len(frac), len(custs)), dtype=np.int8)
    for r, k in enumerate(frac):
        for c in columns[k].visits:
            B[r, pos[c]] = 1
    zf = z[frac]
    trip = np.array(list(itertools.combinations(range(len(custs)), 3)), dtype=np.int64)
    res = []
    for s in range(0, len(trip), chunk):
        T = trip[s : s + chunk]
        cnt = B[:, T[:, 0]] + B[:, T[:, 1]] + B[:, T[:, 2]]
        lhs = zf @ (cnt >= 2)
        hit = np.flatnonzero(lhs > 1 + VIOL_TOL)
        for h in hit:
            a, b, c = T[h]
            res.append(((custs[a], custs[b], custs[c]), float(lhs[h] - 1.0)))
    res.sort(key=lambda kv: (-kv[1], kv[0]))
    return res


@dataclass
class RelaxationConfig:
    root: bool = True
    src_threshold_root: float = 0.0075e-2
    src_threshold_node: float = 0.03e-2
    max_src_per_round: int = 8
    max_src_candidates: int = 40
    use_rcc: bool = True
    use_src: bool = True
    max_rcc_per_round: int = 50
    deadline: float | None = None


@dataclass
class RelaxationResult:
    status: str
    lower_bound: float
    values: np.ndarray
    columns: list
    flows: np.ndarray
    duals: DualPrices | None
    bound_history: list
    iterations: int
    lp_solves: int
    rccs_added: int = 0
    srcs_added: int = 0

    @property
    def integral(self) -> bool:
        return bool(np.all((self.values < 1e-6) | (self.values > 1 - 1e-6)))

    def solution_routes(self) -> list:
        return [c.route for c, z in zip(self.columns, self.values) if z > 0.5]


class MasterProblem:
    """Global column/cut store plus the LP of the node currently being solved."""

    def __init__(self, inst: StochasticInstance, pool: CutPool | None = None, artificial_cost: float | None = None):
        self.inst = inst
        self.pool = pool if pool is not None else CutPool()
        self.columns: list[Column] = []
        self._index: dict[tuple, int] = {}
        if artificial_cost is None:
            artificial_cost = 10.0 * sum(2 * inst.cost[0, i] for i in inst.customers) + 1.0
        self.artificial_cost = float(artificial_cost)
        self.allowed = default_allowed(inst.n)
        self.active: list[int] = []
        self.lp: LinearProgram | None = None
        self._col_status: dict[int, int] = {}
        self._row_status: np.ndarray | None = None
        self._n_rows_built = 0
        self.last: LpSolution | None = None

    # -- rows -------------------------------------------------------------
    @property
    def fleet_row(self) -> int | None:
        return self.inst.n if self.inst.fleet is not None else None

    @property
    def first_cut_row(self) -> int:
        return self.inst.n + (1 if self.inst.fleet is not None else 0)

    def _cut_entries(self, kind: str, k: int, col: Column) -> float:
        if kind == "rcc":
            return float(_exit_count(col.arcs, self.pool.rccs[k]))
        T = self.pool.srcs[k]
        return float(sum(1 for i in T if i in col.visits) // 2)

    def _column_entries(self, col: Column) -> dict:
        e = {i - 1: 1.0 for i in col.route}
        if self.fleet_row is not None:
            e[self.fleet_row] = 1.0
        base = self.first_cut_row
        for r, (kind, k) in enumerate(self.pool.order):
            v = self._cut_entries(kind, k, col)
            if v:
                e[base + r] = v
        return e

    # -- columns ----------------------------------------------------------
    def add_columns(self, cols: Iterable[Column]) -> list[int]:
        """Add to the global pool; columns compatible with the node also enter the LP."""
        added = []
        for col in cols:
            if col.route in self._index:
                continue
            if not self.inst.is_load_feasible(col.route):
                raise ValueError(f"column {col.route} violates the load factor limit")
            cid = len(self.columns)
            self.columns.append(col)
            self._index[col.route] = cid
            added.append(cid)
            if self.lp is not None and col.uses_all(self.allowed):
                self.lp.add_column(col.cost, self._column_entries(col))
                self.active.append(cid)
        return added

    def build(self, allowed: np.ndarray | None = None) -> None:
        """(Re)build the LP for a node given its allowed-arc matrix."""
        if allowed is not None:
            self.allowed = allowed
        n = self.inst.n
        lp = LinearProgram()
        for _ in range(n):
            lp.add_row("=", 1.0)
        if self.inst.fleet is not None:
            lp.add_row("<=", float(self.inst.fleet))
        for kind, k in self.pool.order:
            if kind == "rcc":
                lp.add_row(">=", float(self.pool.rcc_rhs[k]))
            else:
                lp.add_row("<=", 1.0)
        for i in range(n):
            lp.add_column(self.artificial_cost, {i: 1.0})
        self.active = [cid for cid, c in enumerate(self.columns) if c.uses_all(self.allowed)]
        for cid in self.active:
            lp.add_column(self.columns[cid].cost, self._column_entries(self.columns[cid]))
        self.lp = lp

    def add_cut_rows(self, start: int) -> None:
        """Append LP rows for pool cuts ``order[start:]``."""
        base = self.first_cut_row
        for r in range(start, len(self.pool.order)):
            kind, k = self.pool.order[r]
            entries = {}
            for pos, cid in enumerate(self.active):
                v = self._cut_entries(kind, k, self.columns[cid])
                if v:
                    entries[self.inst.n + pos] = v
            if kind == "rcc":
                row = self.lp.add_row(">=", float(self.pool.rcc_rhs[k]), entries)
            else:
                row = self.lp.add_row("<=", 1.0, entries)
            assert row == base + r

    def _warm_basis(self) -> Basis | None:
        if self._row_status is None:
            return None
        n = self.inst.n
        cols = np.full(self.lp.n_cols, AT_LOWER, dtype=np.int8)
        for a in range(n):
            cols[a] = self._col_status.get(-1 - a, AT_LOWER)
        for pos, cid in enumerate(self.active):
            cols[n + pos] = self._col_status.get(cid, AT_LOWER)
        rows = self._row_status
        if rows.size < self.lp.n_rows:
            rows = np.concatenate([rows, np.zeros(self.lp.n_rows - rows.size, dtype=np.int8)])
        return Basis(cols, rows[: self.lp.n_rows].copy())

    def solve(self) -> LpSolution:
        if self.lp is None:
            self.build()
        sol = solve_lp(self.lp, self._warm_basis())
        if sol.basis is not None and sol.status == "optimal":
            n = self.inst.n
            st = {}
            for a in range(n):
                st[-1 - a] = int(sol.basis.cols[a])
            for pos, cid in enumerate(self.active):
                st[cid] = int(sol.basis.cols[n + pos])
            self._col_status = st
            self._row_status = sol.basis.rows.copy()
        self.last = sol
        return sol

    def duals(self, sol: LpSolution) -> DualPrices:
        n = self.inst.n
        y = sol.duals
        alpha = np.zeros(n + 1)
        alpha[1:] = y[:n]
        beta = float(y[self.fleet_row]) if self.fleet_row is not None else 0.0
        base = self.first_cut_row
        gamma = np.zeros(len(self.pool.rccs))
        delta = np.zeros(len(self.pool.srcs))
        for r, (kind, k) in enumerate(self.pool.order):
            if kind == "rcc":
                gamma[k] = y[base + r]
            else:
                delta[k] = y[base + r]
        return DualPrices(alpha, beta, gamma, delta)

    def split(self, sol: LpSolution):
        """(artificial values, active columns, their values)."""
        n = self.inst.n
        return sol.primal[:n], [self.columns[c] for c in self.active], sol.primal[n:]

    def restricted_objective(self, extra_rows=(), forbid_cols=()) -> float:
        """LP value over existing columns with extra rows and/or columns removed."""
        n = self.inst.n
        forbid = set(forbid_cols)
        keep = list(range(n)) + [n + p for p, cid in enumerate(self.active) if cid not in forbid]
        lp = self.lp.subset(keep)
        for sense, rhs, coef in extra_rows:
            entries = {}
            for newpos, old in enumerate(keep):
                if old < n:
                    continue
                v = coef(self.columns[self.active[old - n]])
                if v:
                    entries[newpos] = v
            lp.add_row(sense, rhs, entries)
        warm = self._warm_basis()
        basis = None
        if warm is not None:
            basis = warm.restricted(keep).extended(lp.n_cols, lp.n_rows)
        sol = solve_lp(lp, basis)
        return sol.objective if sol.optimal else math.inf

    def dump_state(self, sol: LpSolution | None = None) -> str:
        """JSON debug dump of columns, pools and duals."""
        sol = sol or self.last
        d = {
            "columns": [{"route": list(c.route), "cost": c.cost} for c in self.columns],
            "active": list(self.active),
            "rccs": [{"set": sorted(S), "rhs": r} for S, r in zip(self.pool.rccs, self.pool.rcc_rhs)],
            "srcs": [list(t) for t in self.pool.srcs],
        }
        if sol is not None and sol.optimal:
            du = self.duals(sol)
            d["objective"] = sol.objective
            d["duals"] = {
                "alpha": du.alpha[1:].tolist(),
                "beta": du.beta,
                "gamma": du.gamma.tolist(),
                "delta": du.delta.tolist(),
            }
        return json.dumps(d)

    def export_lp(self) -> str:
        n = self.inst.n
        names = [f"art{i + 1}" for i in range(n)] + [
            "z_" + "_".join(map(str, self.columns[c].route)) for c in self.active
        ]
        return write_lp(self.lp, names)


def default_allowed(n: int) -> np.ndarray:
    allowed = np.ones((n + 1, n + 1), dtype=bool)
    np.fill_diagonal(allowed, False)
    return allowed


Pricer = Callable[[DualPrices, CutPool, np.ndarray], list]


def solve_relaxation(master: MasterProblem, pricer: Pricer, config: RelaxationConfig | None = None) -> RelaxationResult:
    """Column generation alternating with RCC separation, then gated SRC rounds.

    ``pricer(duals, pool, allowed)`` must return negative reduced-cost columns
    and return an empty list only when none exists.
    """
    cfg = config or RelaxationConfig()
    inst = master.inst
    if master.lp is None:
        master.build()
    history: list[float] = []
    it = 0
    solves = 0
    rcc_added = src_added = 0
    status = "optimal"
    while True:
        sol = master.solve()
        solves += 1
        if not sol.optimal:
            raise RuntimeError(f"restricted master LP ended with status {sol.status}")
        duals = master.duals(sol)
        if cfg.deadline is not None and time.monotonic() > cfg.deadline:
            status = "timeout"
            break
        it += 1
        cols = pricer(duals, master.pool, master.allowed)
        log.debug("iteration %d: master %.6f, %d new columns", it, sol.objective, len(cols))
        if cols:
            if not master.add_columns(cols):
                raise RuntimeError("pricer returned only columns already in the master")
            continue
        # column generation converged for the current cut set
        lb = sol.objective
        if history and lb < history[-1] - 1e-7 * max(1.0, abs(lb)):
            log.warning("node bound decreased from %.9g to %.9g", history[-1], lb)
        history.append(lb)
        art, cols_now, vals = master.split(sol)
        if np.any(art > 1e-9):
            status = "infeasible"
            break
        flows = arc_flows(cols_now, vals, inst.n)
        if cfg.use_rcc:
            start = len(master.pool.order)
            new = 0
            for S, _ in separate_rcc(flows, inst, max_cuts=cfg.max_rcc_per_round):
                new += master.pool.add_rcc(S, rcc_rhs(inst, S))
            if new:
                master.add_cut_rows(start)
                rcc_added += new
                continue
        if cfg.use_src:
            cand = separate_src(vals, cols_now, inst.n)
            if cand:
                thr = cfg.src_threshold_root if cfg.root else cfg.src_threshold_node
                base = sol.objective
                accepted = []
                for T, _ in cand[: cfg.max_src_candidates]:
                    if tuple(T) in master.pool.srcs:
                        continue
                    Ts = set(T)
                    val = master.restricted_objective(
                        [("<=", 1.0, lambda c, Ts=Ts: float(len(Ts & c.visits) // 2))]
                    )
                    solves += 1
                    if val - base > thr * max(abs(base), 1e-12):
                        accepted.append(T)
                        if len(accepted) >= cfg.max_src_per_round:
                            break
                if accepted:
                    start = len(master.pool.order)
                    for T in accepted:
                        master.pool.add_src(T)
                    master.add_cut_rows(start)
                    src_added += len(accepted)
                    continue
        break
    art, cols_now, vals = master.split(sol)
    flows = arc_flows(cols_now, vals, inst.n)
    if status == "infeasible":
        lb = math.inf
    elif status == "timeout":
        lb = history[-1] if history else -math.inf
    else:
        lb = sol.objective
    return RelaxationResult(
        status, lb, np.asarray(vals), cols_now, flows, duals, history, it, solves, rcc_added, src_added
    )
