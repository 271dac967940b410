"""Compiled inner loops shared by the restocking DP, the labeling pricer and the correlated DP."""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def trips(xi, q, Q):
    if xi <= q:
        return 0
    return (xi - q + Q - 1) // Q


@njit(cache=True)
def continuation(phi, Q, q, sup, prb, ns, trip_cost):
    """E[trips * trip_cost + phi(residual)] when arriving with capacity q."""
    acc = 0.0
    for s in range(ns):
        xi = sup[s]
        if xi <= q:
            acc += prb[s] * phi[q - xi]
        else:
            t = (xi - q + Q - 1) // Q
            acc += prb[s] * (t * trip_cost + phi[q + Q * t - xi])
    return acc


@njit(cache=True)
def dp_step(phi_next, Q, c_ij, c_i0, c_0j, c_j0, sup, prb, ns, out, restock):
    """One backward optimal-restocking step from customer i to its successor j.

    Fills ``out[q] = min(phi'(q), phi'')`` and ``restock[q] = phi'' < phi'(q)``;
    returns ``phi''``.  ``phi_next`` is the cost-to-go once j is served.
    """
    trip = c_j0 + c_0j
    pp = c_i0 + c_0j + continuation(phi_next, Q, Q, sup, prb, ns, trip)
    for q in range(Q + 1):
        p1 = c_ij + continuation(phi_next, Q, q, sup, prb, ns, trip)
        if pp < p1:
            out[q] = pp
            restock[q] = True
        else:
            out[q] = p1
            restock[q] = False
    return pp


@njit(cache=True)
def dp_step_values(phi_next, Q, c_ij, c_i0, c_0j, c_j0, sup, prb, ns, out):
    """``dp_step`` without the decision array (used by the pricer)."""
    trip = c_j0 + c_0j
    pp = c_i0 + c_0j + continuation(phi_next, Q, Q, sup, prb, ns, trip)
    for q in range(Q + 1):
        p1 = c_ij + continuation(phi_next, Q, q, sup, prb, ns, trip)
        out[q] = pp if pp < p1 else p1
    return pp


@njit(cache=True)
def simulate_batch(route, cost, Q, restock, demands):
    """Realised cost of executing a restocking policy on many demand scenarios.

    ``demands`` has one row per scenario and one column per route position.
    """
    ns, H = demands.shape
    out = np.empty(ns)
    for s in range(ns):
        v = route[0]
        total = cost[0, v]
        q = Q
        for k in range(H):
            v = route[k]
            if k > 0:
                u = route[k - 1]
                if restock[k - 1, q]:
                    total += cost[u, 0] + cost[0, v]
                    q = Q
                else:
                    total += cost[u, v]
            xi = demands[s, k]
            t = trips(xi, q, Q)
            total += t * (cost[v, 0] + cost[0, v])
            q = q + Q * t - xi
        total += cost[route[H - 1], 0]
        out[s] = total
    return out


@njit(cache=True)
def corr_step(phi_next, lo_next, Q, c_ij, c_i0, c_0j, c_j0, sup, prb, ns, lo, out, restock):
    """Backward step of the correlated DP from customer i to successor j.

    Rows of ``sup``/``prb`` hold the predictive pmf of j's demand for each
    accumulated demand ``X = lo + row``; ``phi_next[q, X' - lo_next]`` is the
    cost-to-go once j is served.  Fills ``out[q, row]`` and ``restock[q, row]``.
    """
    trip = c_j0 + c_0j
    nx = ns.size
    for r in range(nx):
        X = lo + r
        m = ns[r]
        pp = 0.0
        for s in range(m):
            xi = sup[r, s]
            t = trips(xi, Q, Q)
            pp += prb[r, s] * (t * trip + phi_next[Q + Q * t - xi, X + xi - lo_next])
        pp += c_i0 + c_0j
        for q in range(Q + 1):
            p1 = 0.0
            for s in range(m):
                xi = sup[r, s]
                t = trips(xi, q, Q)
                p1 += prb[r, s] * (t * trip + phi_next[q + Q * t - xi, X + xi - lo_next])
            p1 += c_ij
            if pp < p1:
                out[q, r] = pp
                restock[q, r] = True
            else:
                out[q, r] = p1
                restock[q, r] = False


@njit(cache=True)
def simulate_corr_batch(route, cost, Q, restock, lows, widths, demands):
    """Realised costs when decisions depend on residual capacity and observed demand.

    ``restock[k, q, X - lows[k]]`` is the decision between positions k and k+1
    (only the first ``widths[k]`` columns are used); demand totals outside the
    table are clamped to its nearest edge.
    """
    ns, H = demands.shape
    out = np.empty(ns)
    for s in range(ns):
        total = cost[0, route[0]]
        q = Q
        X = 0
        for k in range(H):
            v = route[k]
            if k > 0:
                u = route[k - 1]
                col = X - lows[k - 1]
                if col < 0:
                    col = 0
                elif col >= widths[k - 1]:
                    col = widths[k - 1] - 1
                if restock[k - 1, q, col]:
                    total += cost[u, 0] + cost[0, v]
                    q = Q
                else:
                    total += cost[u, v]
            xi = demands[s, k]
            t = trips(xi, q, Q)
            total += t * (cost[v, 0] + cost[0, v])
            q = q + Q * t - xi
            X += xi
        total += cost[route[H - 1], 0]
        out[s] = total
    return out
