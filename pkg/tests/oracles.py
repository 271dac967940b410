"""Slow, independent reference computations used by the test suite.

Nothing here imports the numba kernels; everything is plain Python so the
production code is checked against a separate implementation.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def _trips(xi, q, Q):
    return max(0, math.ceil((xi - q) / Q))


def _pmf(dist):
    return list(zip(dist.support.tolist(), dist.probs.tolist()))


def expectimin_cost(cost, Q, pmfs, route):
    """Expected cost of ``route`` under the best restocking decisions.

    ``pmfs[i]`` is a list of (value, prob) pairs for node ``i``.  The
    recursion walks the full outcome/decision tree without memoisation.
    """
    route = list(route)
    H = len(route)

    def serve(k, q):
        # arrive at route[k] with residual capacity q, return expected cost from here
        j = route[k]
        trip = cost[j][0] + cost[0][j]
        total = 0.0
        for xi, p in pmfs[j]:
            t = _trips(xi, q, Q)
            total += p * (t * trip + after(k, q + t * Q - xi))
        return total

    def after(k, q):
        j = route[k]
        if k == H - 1:
            return cost[j][0]
        nxt = route[k + 1]
        go = cost[j][nxt] + serve(k + 1, q)
        restock = cost[j][0] + cost[0][nxt] + serve(k + 1, Q)
        return min(go, restock)

    return cost[0][route[0]] + serve(0, Q)


def instance_cost_oracle(inst, route):
    pmfs = [_pmf(d) for d in inst.demands]
    return expectimin_cost(inst.cost.tolist(), inst.capacity, pmfs, route)


def scenario_average(inst, route, realised_cost):
    """pmf-weighted average of ``realised_cost(scenario)`` over every scenario."""
    pmfs = [_pmf(inst.demands[i]) for i in route]
    total = 0.0
    for combo in itertools.product(*pmfs):
        p = math.prod(pr for _, pr in combo)
        total += p * realised_cost([v for v, _ in combo])
    return total


def zeta_oracle(route, duals, pool):
    path = [0] + list(route) + [0]
    arcs = list(zip(path[:-1], path[1:]))
    z = sum(duals.alpha[i] for i in route) + duals.beta
    for S, g in zip(pool.rccs, duals.gamma):
        z += g * sum(1 for i, j in arcs if i in S and j not in S)
    for T, d in zip(pool.srcs, duals.delta):
        z += d * (len(set(T) & set(route)) // 2)
    return z


def feasible_routes(inst, max_len=None):
    """All elementary customer sequences whose expected load fits f*Q."""
    custs = list(inst.customers)
    limit = inst.max_load + 1e-9
    out = []
    for k in range(1, (max_len or len(custs)) + 1):
        for r in itertools.permutations(custs, k):
            if sum(inst.expected[i] for i in r) <= limit:
                out.append(r)
    return out


def brute_force_reduced_costs(inst, duals, pool, route_cost, allowed=None):
    """{route: reduced cost} over every feasible elementary route."""
    out = {}
    for r in feasible_routes(inst):
        if allowed is not None:
            path = (0,) + r + (0,)
            if not all(allowed[i, j] for i, j in zip(path[:-1], path[1:])):
                continue
        out[r] = route_cost(inst, r) - zeta_oracle(r, duals, pool)
    return out


def best_completions(rcs):
    """min reduced cost over routes ending with each suffix (backward partial path)."""
    best = {}
    for r, v in rcs.items():
        for s in range(len(r)):
            t = r[s:]
            if v < best.get(t, math.inf):
                best[t] = v
    return best


def set_partition_optimum(inst, route_cost):
    """Optimal integer objective by DP over customer subsets.

    Returns (objective, routes) or (inf, None) when infeasible.
    """
    n = inst.n
    best_route = {}
    for r in feasible_routes(inst):
        mask = 0
        for i in r:
            mask |= 1 << (i - 1)
        c = route_cost(inst, r)
        if mask not in best_route or c < best_route[mask][0]:
            best_route[mask] = (c, r)
    full = (1 << n) - 1
    kmax = inst.fleet if inst.fleet is not None else n
    # value[k][mask]: cheapest cover of mask with exactly k routes
    INF = math.inf
    value = [dict() for _ in range(kmax + 1)]
    value[0][0] = (0.0, ())
    for k in range(1, kmax + 1):
        for mask, (v, routes) in value[k - 1].items():
            rest = full & ~mask
            if not rest:
                continue
            low = rest & -rest
            # the route covering the lowest uncovered customer, to avoid permutations
            for m2, (c, r) in best_route.items():
                if m2 & low and not (m2 & mask):
                    nm = mask | m2
                    cand = v + c
                    if cand < value[k].get(nm, (INF,))[0]:
                        value[k][nm] = (cand, routes + (r,))
    best = (INF, None)
    for k in range(1, kmax + 1):
        if full in value[k] and value[k][full][0] < best[0]:
            best = value[k][full]
    return best


def random_two_point(rng, Q, max_points=4):
    """Random small-support pmf: list of (value, prob)."""
    k = int(rng.integers(1, max_points + 1))
    vals = sorted(rng.choice(np.arange(0, Q + 3), size=k, replace=False).tolist())
    w = rng.uniform(0.1, 1.0, size=k)
    w /= w.sum()
    return vals, w.tolist()
