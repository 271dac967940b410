"""Branch-and-bound over arc flows around the cut/price loop."""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .instance import StochasticInstance
from .master import (
    Column,
    CutPool,
    MasterProblem,
    RelaxationConfig,
    arc_flows,
    default_allowed,
    solve_relaxation,
)
from .pricing import Pricer, PricingConfig
from .restocking import route_cost_or

__all__ = [
    "BnbNode",
    "Incumbent",
    "SolverConfig",
    "SolveResult",
    "allowed_from_fixings",
    "conflicting_columns",
    "select_branch_arc",
    "sweep_solution",
    "verify_solution",
    "pool_heuristic",
    "solve",
]

log = logging.getLogger(__name__)

FRAC_TOL = 1e-6
PRUNE_TOL = 1e-6


@dataclass(frozen=True)
class BnbNode:
    forbidden: frozenset = frozenset()
    forced: frozenset = frozenset()
    lower_bound: float = -math.inf
    depth: int = 0

    def __post_init__(self):
        if self.forbidden & self.forced:
            raise ValueError("an arc cannot be both forced and forbidden")
        heads, tails = set(), set()
        for i, j in self.forced:
            if (i != 0 and i in tails) or (j != 0 and j in heads):
                raise ValueError(f"forced arcs {sorted(self.forced)} are not vertex-disjoint paths")
            tails.add(i)
            heads.add(j)

    def children(self, arc: tuple) -> tuple["BnbNode", "BnbNode"]:
        lb, d = self.lower_bound, self.depth + 1
        return (
            BnbNode(self.forbidden | {arc}, self.forced, lb, d),
            BnbNode(self.forbidden, self.forced | {arc}, lb, d),
        )


@dataclass
class Incumbent:
    routes: list = field(default_factory=list)
    objective: float = math.inf
    feasible: bool = False


@dataclass
class SolverConfig:
    time_limit: float = 600 * 60.0
    use_knapsack: bool = False
    use_rcsp: bool = True
    rcsp_m: int = 8
    workers: int = 1
    max_columns: int = 200
    heuristic_stop: int = 5
    strong_candidates: int = 10
    use_rcc: bool = True
    use_src: bool = True
    max_nodes: int = 0
    heuristic_every: int = 20
    heuristic_time: float = 10.0


@dataclass
class SolveResult:
    status: str
    incumbent: Incumbent
    lower_bound: float
    gap: float
    runtime: float
    stats: dict
    pool: CutPool

    @property
    def objective(self) -> float:
        return self.incumbent.objective


def allowed_from_fixings(n: int, forbidden=(), forced=()) -> np.ndarray:
    a = default_allowed(n)
    for i, j in forbidden:
        a[i, j] = False
    for i, j in forced:
        if i != 0:
            keep = a[i, j]
            a[i, :] = False
            a[i, j] = keep
        if j != 0:
            keep = a[i, j]
            a[:, j] = False
            a[i, j] = keep
    return a


def _uses(col: Column, arc) -> bool:
    return arc in col.arcs


def conflicting_columns(col: Column, arc, force: bool) -> bool:
    """Whether ``col`` is incompatible with forbidding (or forcing) ``arc``."""
    i, j = arc
    if not force:
        return _uses(col, arc)
    for a, b in col.arcs:
        if (a == i and i != 0 and b != j) or (b == j and j != 0 and a != i):
            return True
    return False


def select_branch_arc(master: MasterProblem, values: Sequence[float], k: int = 10) -> tuple:
    """Strong branching over the ``k`` most fractional arcs.

    Each candidate's children are evaluated by re-solving the master over
    existing columns only; the arc whose weaker child rises the most wins,
    ties going to the lexicographically smaller arc.
    """
    cols = [master.columns[c] for c in master.active]
    flows = arc_flows(cols, values, master.inst.n)
    frac = np.minimum(flows, 1.0 - flows)
    cand = [(-float(frac[i, j]), (i, j)) for i, j in zip(*np.nonzero(frac > FRAC_TOL))]
    if not cand:
        raise ValueError("the arc flows are integral; nothing to branch on")
    cand.sort()
    cand = [(int(a[0]), int(a[1])) for _, a in cand[:k]]
    if len(cand) == 1:
        return cand[0]
    base = master.last.objective
    best, best_score = None, -math.inf
    for arc in sorted(cand):
        scores = []
        for force in (False, True):
            drop = [cid for cid in master.active if conflicting_columns(master.columns[cid], arc, force)]
            scores.append(master.restricted_objective(forbid_cols=drop) - base)
        s = min(scores)
        if s > best_score + 1e-9:
            best, best_score = arc, s
    return best


def _sweep_order(inst: StochasticInstance) -> list[int]:
    if inst.coords is None:
        return list(inst.customers)
    d = inst.coords[0]
    ang = {i: math.atan2(inst.coords[i][1] - d[1], inst.coords[i][0] - d[0]) for i in inst.customers}
    return sorted(inst.customers, key=lambda i: (ang[i], i))


def sweep_solution(inst: StochasticInstance) -> Incumbent:
    """Angular sweep packing up to f*Q expected load per route, best of each start angle."""
    order = _sweep_order(inst)
    best = Incumbent()
    cache: dict[tuple, float] = {}

    def cost(r):
        if r not in cache:
            cache[r] = route_cost_or(inst, r)
        return cache[r]

    starts = range(len(order)) if len(order) <= 60 else range(0, len(order), max(1, len(order) // 60))
    for s in starts:
        seq = order[s:] + order[:s]
        routes, cur, load = [], [], 0.0
        for i in seq:
            if cur and load + inst.expected[i] > inst.max_load + 1e-9:
                routes.append(tuple(cur))
                cur, load = [], 0.0
            cur.append(i)
            load += inst.expected[i]
        if cur:
            routes.append(tuple(cur))
        if inst.fleet is not None and len(routes) > inst.fleet:
            continue
        routes = [min(r, r[::-1], key=cost) for r in routes]
        total = sum(cost(r) for r in routes)
        if total < best.objective - 1e-12:
            best = Incumbent(routes, total, True)
    return best


def verify_solution(inst: StochasticInstance, routes: Sequence[Sequence[int]]) -> float:
    """Independent feasibility check; returns the recomputed objective."""
    seen = [i for r in routes for i in r]
    if sorted(seen) != list(inst.customers):
        raise ValueError("routes do not partition the customers")
    for r in routes:
        if not inst.is_load_feasible(r):
            raise ValueError(f"route {tuple(r)} exceeds the load limit")
    if inst.fleet is not None and len(routes) > inst.fleet:
        raise ValueError(f"{len(routes)} routes exceed the fleet of {inst.fleet}")
    return float(sum(route_cost_or(inst, r) for r in routes))


def pool_heuristic(inst: StochasticInstance, columns: Sequence[Column], time_limit: float = 10.0) -> Incumbent:
    """Best partition using only ``columns``, from a set-partitioning integer program."""
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy.sparse import coo_matrix

    cols = [c for c in columns if inst.is_load_feasible(c.route)]
    if not cols or time_limit <= 0:
        return Incumbent()
    n = inst.n
    rows, cidx = [], []
    for k, c in enumerate(cols):
        rows.extend(i - 1 for i in c.route)
        cidx.extend([k] * len(c.route))
    A = coo_matrix((np.ones(len(rows)), (rows, cidx)), shape=(n, len(cols))).tocsr()
    cons = [LinearConstraint(A, 1.0, 1.0)]
    if inst.fleet is not None:
        cons.append(LinearConstraint(np.ones((1, len(cols))), 0.0, float(inst.fleet)))
    res = milp(
        np.array([c.cost for c in cols]),
        constraints=cons,
        integrality=np.ones(len(cols)),
        bounds=Bounds(0.0, 1.0),
        options={"time_limit": float(time_limit), "disp": False},
    )
    if res.x is None:
        return Incumbent()
    routes = [cols[k].route for k in np.flatnonzero(res.x > 0.5)]
    try:
        obj = verify_solution(inst, routes)
    except ValueError:
        return Incumbent()
    return Incumbent(routes, obj, True)


def _routes_from_columns(columns, values) -> list:
    return [c.route for c, z in zip(columns, values) if z > 0.5]


def solve(inst: StochasticInstance, config: SolverConfig | None = None) -> SolveResult:
    cfg = config or SolverConfig()
    t0 = time.monotonic()
    deadline = t0 + cfg.time_limit
    pricer = Pricer(
        inst,
        PricingConfig(
            max_columns=cfg.max_columns,
            use_rcsp=cfg.use_rcsp,
            use_knapsack=cfg.use_knapsack,
            m_size=cfg.rcsp_m,
            workers=cfg.workers,
        ),
        heuristic_stop=cfg.heuristic_stop,
    )
    master = MasterProblem(inst)
    inc = sweep_solution(inst)
    if inc.feasible:
        master.add_columns(Column.from_route(inst, r) for r in inc.routes)
        log.info("initial incumbent %.6f with %d routes", inc.objective, len(inc.routes))
    master.add_columns(Column.from_route(inst, (i,)) for i in inst.customers if inst.is_load_feasible((i,)))

    counter = itertools.count()
    root = BnbNode()
    heap = [(root.lower_bound, next(counter), root)]
    global_lb = -math.inf
    nodes = 0
    root_lb = None
    status = "optimal"
    timed_out = False

    def open_lb():
        return heap[0][0] if heap else math.inf

    while heap:
        if time.monotonic() > deadline or (cfg.max_nodes and nodes >= cfg.max_nodes):
            timed_out = True
            break
        lb_node, _, node = heapq.heappop(heap)
        if lb_node >= inc.objective - PRUNE_TOL:
            continue
        nodes += 1
        master.build(allowed_from_fixings(inst.n, node.forbidden, node.forced))
        res = solve_relaxation(
            master,
            pricer,
            RelaxationConfig(root=node.depth == 0, use_rcc=cfg.use_rcc, use_src=cfg.use_src, deadline=deadline),
        )
        if res.status == "timeout":
            heapq.heappush(heap, (node.lower_bound, next(counter), node))
            timed_out = True
            break
        lb = max(res.lower_bound, node.lower_bound)
        if node.depth == 0:
            root_lb = lb
        if cfg.heuristic_every and res.status != "infeasible" and (nodes - 1) % cfg.heuristic_every == 0:
            h = pool_heuristic(inst, master.columns, min(cfg.heuristic_time, deadline - time.monotonic()))
            if h.feasible and h.objective < inc.objective - 1e-9:
                inc = h
                log.info("pool heuristic incumbent %.6f at node %d", h.objective, nodes)
        if res.status == "infeasible" or lb >= inc.objective - PRUNE_TOL:
            pass
        elif res.integral:
            routes = _routes_from_columns(res.columns, res.values)
            obj = float(sum(c.cost for c, z in zip(res.columns, res.values) if z > 0.5))
            if obj < inc.objective - 1e-9:
                inc = Incumbent(routes, obj, True)
                log.info("new incumbent %.6f at node %d", obj, nodes)
        else:
            arc = select_branch_arc(master, res.values, cfg.strong_candidates)
            for child in BnbNode(node.forbidden, node.forced, lb, node.depth).children(arc):
                heapq.heappush(heap, (lb, next(counter), child))
        global_lb = max(global_lb, min(open_lb(), inc.objective))
        log.info(
            "node %d depth %d: LB %.6f UB %.6f gap %.4f%% open %d RCCs %d SRCs %d",
            nodes, node.depth, global_lb, inc.objective, 100 * _gap(inc.objective, global_lb),
            len(heap), len(master.pool.rccs), len(master.pool.srcs),
        )
        if open_lb() >= inc.objective - PRUNE_TOL:
            heap.clear()

    if timed_out:
        global_lb = max(global_lb, min(open_lb(), inc.objective))
        status = "timeout"
    else:
        global_lb = inc.objective if inc.feasible else math.inf
        status = "optimal" if inc.feasible else "infeasible"
    if inc.feasible:
        check = verify_solution(inst, inc.routes)
        if abs(check - inc.objective) > 1e-6 * max(1.0, abs(check)):
            raise RuntimeError(f"incumbent cost {inc.objective} disagrees with recomputation {check}")
        inc = Incumbent(sorted(inc.routes), check, True)
    runtime = time.monotonic() - t0
    stats = {
        "nodes": nodes,
        "rccs": len(master.pool.rccs),
        "srcs": len(master.pool.srcs),
        "columns": len(master.columns),
        "root_lb": root_lb,
        "pricing": pricer.stats.as_dict(),
    }
    return SolveResult(status, inc, global_lb, _gap(inc.objective, global_lb), runtime, stats, master.pool)


def _gap(ub: float, lb: float) -> float:
    if not math.isfinite(ub):
        return math.inf
    if ub == 0:
        return 0.0
    return max(0.0, (ub - lb) / abs(ub))
