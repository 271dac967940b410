"""Elementary pricing by backward labeling with cost-to-go tables in labels.

A label is a partial route read backwards from the depot: ``theta`` ends the
route, ``v = theta[0]`` is the customer served first so far, and ``phi`` is
the optimal-restocking cost-to-go once ``v`` is served.  Extending a label to
customer ``i`` prepends ``i`` and performs one step of the restocking DP.
There are no dominance rules: every elementary extension is explored unless a
completion bound proves that no route built from the label can have negative
reduced cost.

Two completion bounds are available:

* knapsack: ``g*(theta) - zeta - KP`` where KP packs the best possible dual
  gain of not-yet-visited customers into the remaining expected load;
* RCSP: the cheapest modified-cost path from the depot to ``v`` over a
  relaxed graph that cannot leave visited customers of a small set ``M``,
  plus ``phi[Q]``.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels, _labeling
from .instance import StochasticInstance
from .master import Column, CutPool, DualPrices, default_allowed, zeta
from .restocking import demand_arrays, route_cost_or

__all__ = [
    "Label",
    "SigmaTable",
    "RcspTable",
    "PricingConfig",
    "PricingStats",
    "sigma_table",
    "init_labels",
    "extend_label",
    "knapsack_bound",
    "select_m",
    "rcsp_precompute",
    "rcsp_bound",
    "reduced_cost",
    "price",
    "Pricer",
]

log = logging.getLogger(__name__)

RC_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class Label:
    theta: tuple
    v: int
    q: float
    phi: np.ndarray
    zeta_acc: float

    def route_cost(self, inst: StochasticInstance) -> float:
        """g*(theta): the cost of closing the label at the depot."""
        sup, prb, ns = demand_arrays(inst)
        v, c = self.v, inst.cost
        return c[0, v] + _kernels.continuation(self.phi, inst.capacity, inst.capacity, sup[v], prb[v], ns[v], c[v, 0] + c[0, v])


@dataclass(frozen=True, eq=False)
class SigmaTable:
    """Per-arc dual gains.

    ``exit[i, j]`` is the total RCC dual of cut sets that arc ``(i, j)`` leaves;
    ``sigma[i, j] = alpha[j] + exit[i, j]``.
    """

    alpha: np.ndarray
    exit: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        s = self.alpha[None, :] + self.exit
        return s

    def item_values(self) -> np.ndarray:
        """Best dual gain a customer can contribute when added to a completion."""
        ex = self.exit.copy()
        np.fill_diagonal(ex, -np.inf)
        v = self.alpha + ex.max(axis=1)
        v[0] = 0.0
        return np.maximum(v, 0.0)


def sigma_table(inst: StochasticInstance, duals: DualPrices, pool: CutPool) -> SigmaTable:
    n = inst.n
    alpha = np.zeros(n + 1)
    alpha[1:] = duals.alpha[1:]
    if pool.rccs:
        mem = pool.rcc_membership(n).astype(np.float64)
        g = np.asarray(duals.gamma, dtype=np.float64)
        ex = (mem.T * g) @ (1.0 - mem)
    else:
        ex = np.zeros((n + 1, n + 1))
    return SigmaTable(alpha, ex)


def reduced_cost(inst: StochasticInstance, route: Sequence[int], duals: DualPrices, pool: CutPool) -> float:
    return route_cost_or(inst, route) - zeta(route, duals, pool)


def init_labels(inst: StochasticInstance, duals: DualPrices, pool: CutPool) -> list[Label]:
    out = []
    for i in inst.customers:
        phi = np.full(inst.capacity + 1, inst.cost[i, 0])
        phi.setflags(write=False)
        out.append(Label((i,), i, inst.max_load - inst.expected[i], phi, zeta((i,), duals, pool)))
    return out


def extend_label(l1: Label, i: int, inst: StochasticInstance, duals: DualPrices, pool: CutPool) -> Label:
    if i in l1.theta or not 1 <= i <= inst.n:
        raise ValueError(f"customer {i} cannot extend label {l1.theta}")
    if inst.expected[i] > l1.q + 1e-9:
        raise ValueError(f"customer {i} does not fit in the remaining load {l1.q}")
    sup, prb, ns = demand_arrays(inst)
    v, c, Q = l1.v, inst.cost, inst.capacity
    phi = np.empty(Q + 1)
    _kernels.dp_step_values(l1.phi, Q, c[i, v], c[i, 0], c[0, v], c[v, 0], sup[v], prb[v], ns[v], phi)
    phi.setflags(write=False)
    theta = (i,) + l1.theta
    return Label(theta, i, l1.q - inst.expected[i], phi, zeta(theta, duals, pool))


def _weights(inst: StochasticInstance) -> np.ndarray:
    # flooring keeps both bounds valid for non-integer expected demands
    return np.floor(inst.expected + 1e-9).astype(np.int64)


def knapsack_bound(l: Label, sigma: SigmaTable, inst: StochasticInstance) -> float:
    visited = np.zeros(inst.n + 1, dtype=bool)
    visited[list(l.theta)] = True
    kp = _labeling.knapsack(sigma.item_values(), _weights(inst), visited, int(math.floor(l.q + 1e-9)))
    return l.route_cost(inst) - l.zeta_acc - kp


def select_m(inst: StochasticInstance, duals: DualPrices, size: int = 8) -> list[int]:
    """The ``size`` customers with the largest alpha / expected-demand ratios."""
    ratios = []
    for i in inst.customers:
        e = inst.expected[i]
        a = duals.alpha[i]
        r = a / e if e > 0 else (math.inf if a > 0 else (0.0 if a == 0 else -math.inf))
        ratios.append((-r, i))
    ratios.sort()
    return [i for _, i in ratios[: min(size, inst.n)]]


@dataclass(frozen=True, eq=False)
class RcspTable:
    values: np.ndarray
    members: tuple
    bit: np.ndarray
    grid: int

    def mask(self, theta: Sequence[int]) -> int:
        m = 0
        for i in theta:
            b = self.bit[i]
            if b >= 0:
                m |= 1 << int(b)
        return m


def rcsp_precompute(
    inst: StochasticInstance, sigma: SigmaTable, M: Sequence[int], allowed: np.ndarray | None = None
) -> RcspTable:
    if allowed is None:
        allowed = default_allowed(inst.n)
    cbar = inst.cost - sigma.sigma
    cbar = np.where(allowed, cbar, np.inf)
    grid = int(math.floor(inst.max_load + 1e-9))
    members = np.asarray(list(M), dtype=np.int64)
    vals = _labeling.rcsp_table(cbar, allowed, _weights(inst), grid, members)
    bit = np.full(inst.n + 1, -1, dtype=np.int64)
    for b, i in enumerate(members):
        bit[i] = b
    return RcspTable(vals, tuple(int(i) for i in members), bit, grid)


def rcsp_bound(l: Label, duals: DualPrices, table: RcspTable, inst: StochasticInstance) -> float:
    qq = int(math.floor(l.q + inst.expected[l.v] + 1e-9))
    qq = min(max(qq, 0), table.grid)
    return table.values[table.mask(l.theta), qq, l.v] + duals.alpha[l.v] + l.phi[inst.capacity] - l.zeta_acc


@dataclass
class PricingConfig:
    max_columns: int = 200
    use_rcsp: bool = True
    use_knapsack: bool = False
    m_size: int = 8
    stop_after: int = 0
    max_labels: int = 0
    workers: int = 1


@dataclass
class PricingStats:
    calls: int = 0
    labels: int = 0
    pruned_rcsp: int = 0
    pruned_kp: int = 0
    found: int = 0
    truncated: bool = False
    seconds: float = 0.0

    def merge(self, raw: np.ndarray) -> None:
        self.labels += int(raw[_labeling.ST_LABELS])
        self.pruned_rcsp += int(raw[_labeling.ST_PRUNED_RCSP])
        self.pruned_kp += int(raw[_labeling.ST_PRUNED_KP])
        self.found += int(raw[_labeling.ST_FOUND])
        self.truncated |= bool(raw[_labeling.ST_TRUNCATED])

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class _Prepared:
    args_head: tuple
    kval: np.ndarray
    kw: np.ndarray
    order: np.ndarray
    n: int


def _prepare(inst, duals, pool, allowed, cfg):
    n = inst.n
    sig = sigma_table(inst, duals, pool)
    sup, prb, ns = demand_arrays(inst)
    src_lists = [[] for _ in range(n + 1)]
    for k, T in enumerate(pool.srcs):
        for i in T:
            src_lists[i].append(k)
    width = max(1, max(len(s) for s in src_lists))
    src_of = np.full((n + 1, width), -1, dtype=np.int64)
    for i, s in enumerate(src_lists):
        src_of[i, : len(s)] = s
    delta = np.asarray(duals.delta, dtype=np.float64).reshape(-1)
    if delta.size == 0:
        delta = np.zeros(0)
    if cfg.use_rcsp:
        M = select_m(inst, duals, cfg.m_size)
        table = rcsp_precompute(inst, sig, M, allowed)
        rc_vals, bit, grid = table.values, table.bit, table.grid
    else:
        rc_vals = np.zeros((1, 1, n + 1))
        bit = np.full(n + 1, -1, dtype=np.int64)
        grid = 0
    # try predecessors with the cheapest modified arc cost first
    key = inst.cost - sig.sigma
    key = np.where(allowed, key, np.inf)[1:, :]
    order = (np.argsort(key, axis=0, kind="stable") + 1).T.copy()
    head = (
        inst.cost, allowed, np.ascontiguousarray(inst.expected), float(inst.max_load), inst.capacity,
        sup, prb, ns, np.ascontiguousarray(sig.alpha), float(duals.beta), np.ascontiguousarray(sig.exit),
        src_of, delta, rc_vals, bit, grid, cfg.use_rcsp, cfg.use_knapsack,
    )
    return _Prepared(head, sig.item_values(), _weights(inst), order, n)


def _run_root(prep: _Prepared, root: int, cfg: PricingConfig, log_rows: int = 0):
    n = prep.n
    cap = max(1, cfg.max_columns)
    route_buf = np.zeros((cap, n), dtype=np.int64)
    len_buf = np.zeros(cap, dtype=np.int64)
    rc_buf = np.zeros(cap)
    stats = np.zeros(5, dtype=np.int64)
    blog = np.full((log_rows, 3 + n), np.nan)
    found = _labeling.label_dfs(
        root, *prep.args_head, prep.kval, prep.kw, prep.order, cfg.stop_after, cap, cfg.max_labels,
        route_buf, len_buf, rc_buf, stats, blog,
    )
    k = min(found, cap)
    routes = [(float(rc_buf[t]), tuple(int(x) for x in route_buf[t, : len_buf[t]])) for t in range(k)]
    return routes, stats, blog


def price(
    inst: StochasticInstance,
    duals: DualPrices,
    pool: CutPool,
    allowed: np.ndarray | None = None,
    config: PricingConfig | None = None,
    stats: PricingStats | None = None,
) -> list[Column]:
    """Negative reduced-cost elementary routes, most negative first.

    With ``config.stop_after == 0`` the search is exhaustive, so an empty
    result proves no negative reduced-cost route exists.  A positive
    ``stop_after`` stops each root's search after that many finds.
    """
    cfg = config or PricingConfig()
    if allowed is None:
        allowed = default_allowed(inst.n)
    t0 = time.perf_counter()
    prep = _prepare(inst, duals, pool, np.ascontiguousarray(allowed), cfg)
    roots = [i for i in inst.customers if allowed[i, 0]]
    if cfg.workers > 1 and len(roots) > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(lambda r: _run_root(prep, r, cfg), roots))
    else:
        results = [_run_root(prep, r, cfg) for r in roots]
    found: dict[tuple, float] = {}
    st = stats if stats is not None else PricingStats()
    st.calls += 1
    for routes, raw, _ in results:
        st.merge(raw)
        for rc, r in routes:
            if r not in found or rc < found[r]:
                found[r] = rc
    best = sorted(found.items(), key=lambda kv: (kv[1], kv[0]))[: cfg.max_columns]
    cols = []
    for r, rc in best:
        col = Column.from_route(inst, r)
        check = col.cost - zeta(r, duals, pool)
        if check < -RC_EPS:
            cols.append(col)
        elif abs(check - rc) > 1e-6:
            log.warning("reduced cost mismatch for %s: labeling %.9g, recomputed %.9g", r, rc, check)
    dt = time.perf_counter() - t0
    st.seconds += dt
    log.debug("pricing (stop_after=%d): %d columns in %.2fs", cfg.stop_after, len(cols), dt)
    return cols


class Pricer:
    """Staged pricer for the cut/price loop.

    A heuristic pass stops each root after ``heuristic_stop`` finds or
    ``heuristic_labels`` labels; only when it finds nothing is the exhaustive
    search run, so an empty answer is always exact.
    """

    def __init__(
        self,
        inst: StochasticInstance,
        config: PricingConfig | None = None,
        heuristic_stop: int = 5,
        heuristic_labels: int = 20_000,
    ):
        self.inst = inst
        self.config = config or PricingConfig()
        self.heuristic_stop = heuristic_stop
        self.heuristic_labels = heuristic_labels
        self.stats = PricingStats()
        self.exact_calls = 0

    def __call__(self, duals: DualPrices, pool: CutPool, allowed: np.ndarray) -> list[Column]:
        base = self.config.__dict__
        if self.heuristic_stop > 0:
            cfg = PricingConfig(**{**base, "stop_after": self.heuristic_stop, "max_labels": self.heuristic_labels})
            st = PricingStats()
            cols = price(self.inst, duals, pool, allowed, cfg, st)
            st.truncated = False
            self._merge(st)
            if cols:
                return cols
        cfg = PricingConfig(**{**base, "stop_after": 0})
        self.exact_calls += 1
        st = PricingStats()
        cols = price(self.inst, duals, pool, allowed, cfg, st)
        self._merge(st)
        if st.truncated:
            raise RuntimeError("label budget exhausted; pricing is not exact")
        return cols

    def _merge(self, st: PricingStats) -> None:
        for k, v in st.__dict__.items():
            if k == "truncated":
                self.stats.truncated |= v
            else:
                setattr(self.stats, k, getattr(self.stats, k) + v)
