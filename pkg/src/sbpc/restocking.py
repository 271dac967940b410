"""Route costs under the optimal restocking policy for independent demands.

After serving customer ``v_k`` with residual capacity ``q`` the vehicle either
proceeds directly to ``v_{k+1}`` or replenishes at the depot first.  Failures
(demand above the residual capacity) cost one depot round trip per
replenishment needed.  The backward DP over ``q in {0..Q}`` gives the expected
cost-to-go tables and the cost-minimising decisions.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .instance import StochasticInstance

__all__ = [
    "RouteError",
    "RoutePolicy",
    "trips_needed",
    "build_policy",
    "route_cost_or",
    "simulate_execution",
    "simulate_many",
    "demand_arrays",
]


class RouteError(ValueError):
    pass


def trips_needed(xi: int, q: int, Q: int) -> int:
    """Replenishment trips needed to serve demand ``xi`` with residual capacity ``q``."""
    if Q < 1:
        raise ValueError("capacity must be positive")
    if xi <= q:
        return 0
    return -(-(xi - q) // Q)


_ARRAYS: "weakref.WeakKeyDictionary[StochasticInstance, tuple]" = weakref.WeakKeyDictionary()


def demand_arrays(inst: StochasticInstance):
    """Padded (support, probs, sizes) arrays indexed by node, cached per instance."""
    got = _ARRAYS.get(inst)
    if got is None:
        smax = max(d.support.size for d in inst.demands)
        n1 = inst.n + 1
        sup = np.zeros((n1, smax), dtype=np.int64)
        prb = np.zeros((n1, smax))
        ns = np.zeros(n1, dtype=np.int64)
        for i, d in enumerate(inst.demands):
            k = d.support.size
            sup[i, :k] = d.support
            prb[i, :k] = d.probs
            ns[i] = k
        got = (sup, prb, ns)
        _ARRAYS[inst] = got
    return got


def check_route(inst: StochasticInstance, route: Sequence[int]) -> np.ndarray:
    r = np.asarray(route, dtype=np.int64).ravel()
    if r.size == 0:
        raise RouteError("route must visit at least one customer")
    if np.any(r < 1) or np.any(r > inst.n):
        raise RouteError(f"route {list(r)} contains the depot or an unknown node")
    if np.unique(r).size != r.size:
        raise RouteError(f"route {list(r)} repeats a customer")
    return r


@dataclass(frozen=True, eq=False)
class RoutePolicy:
    """Optimal restocking policy of one route.

    ``tables[k]`` is the cost-to-go once ``route[k]`` is served (0-based);
    ``restock[k, q]`` says whether to replenish between ``route[k]`` and
    ``route[k+1]`` with residual capacity ``q``.
    """

    route: np.ndarray
    tables: np.ndarray
    restock: np.ndarray
    capacity: int
    cost_matrix: np.ndarray
    expected_cost: float

    @property
    def length(self) -> int:
        return int(self.route.size)


def build_policy(inst: StochasticInstance, route: Sequence[int]) -> RoutePolicy:
    r = check_route(inst, route)
    sup, prb, ns = demand_arrays(inst)
    Q = inst.capacity
    c = inst.cost
    H = r.size
    tables = np.empty((H, Q + 1))
    restock = np.zeros((max(H - 1, 0), Q + 1), dtype=np.bool_)
    tables[H - 1, :] = c[r[H - 1], 0]
    for k in range(H - 2, -1, -1):
        i, j = r[k], r[k + 1]
        _kernels.dp_step(
            tables[k + 1], Q, c[i, j], c[i, 0], c[0, j], c[j, 0],
            sup[j], prb[j], ns[j], tables[k], restock[k],
        )
    v1 = r[0]
    g = c[0, v1] + _kernels.continuation(
        tables[0], Q, Q, sup[v1], prb[v1], ns[v1], c[v1, 0] + c[0, v1]
    )
    for a in (tables, restock, r):
        a.setflags(write=False)
    return RoutePolicy(r, tables, restock, Q, inst.cost, float(g))


def route_cost_or(inst: StochasticInstance, route: Sequence[int]) -> float:
    """Expected cost g*(route) under optimal restocking."""
    return build_policy(inst, route).expected_cost


def simulate_execution(policy: RoutePolicy, scenario: Sequence[int], costs=None) -> float:
    """Realised cost of driving ``policy.route`` when the demands are ``scenario``."""
    d = np.asarray(scenario, dtype=np.int64).reshape(1, -1)
    return float(simulate_many(policy, d, costs)[0])


def simulate_many(policy: RoutePolicy, scenarios, costs=None) -> np.ndarray:
    """Vectorised :func:`simulate_execution` over rows of ``scenarios``."""
    d = np.ascontiguousarray(scenarios, dtype=np.int64)
    if d.ndim != 2 or d.shape[1] != policy.length:
        raise RouteError("each scenario needs exactly one demand per route position")
    if np.any(d < 0):
        raise RouteError("realised demands must be nonnegative")
    c = policy.cost_matrix if costs is None else np.asarray(costs, dtype=np.float64)
    restock = policy.restock
    if restock.shape[0] == 0:
        restock = np.zeros((1, policy.capacity + 1), dtype=np.bool_)
    return _kernels.simulate_batch(policy.route, c, policy.capacity, restock, d)
