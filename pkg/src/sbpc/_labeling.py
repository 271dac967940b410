"""Compiled depth-first elementary backward labeling with completion bounds."""

import numpy as np
from numba import njit

from ._kernels import continuation, dp_step_values

RC_EPS = 1e-6
INF = np.inf

# stats slots
ST_LABELS, ST_PRUNED_RCSP, ST_PRUNED_KP, ST_FOUND, ST_TRUNCATED = 0, 1, 2, 3, 4


@njit(cache=True, inline="always")
def _offer(best, pred, second, w, j, val, frm):
    # keep the best value and the best value reached from a different predecessor
    if val < best[w, j]:
        if pred[w, j] != frm:
            second[w, j] = best[w, j]
        best[w, j] = val
        pred[w, j] = frm
        return True
    if frm != pred[w, j] and val < second[w, j]:
        second[w, j] = val
        return True
    return False


@njit(cache=True)
def rcsp_table(cbar, allowed, kw, G, m_nodes):
    """Resource-constrained shortest path values without 2-cycles.

    ``out[mask, g, j]`` is the least modified cost of a depot -> ``j`` path
    that never departs from a customer in the ``mask`` subset of ``m_nodes``,
    never uses a sub-path ``i -> k -> i``, and whose integer weights sum to at
    most ``g``.  Customers may otherwise repeat, so this relaxes elementarity.
    """
    n1 = cbar.shape[0]
    nm = m_nodes.size
    nmask = 1 << nm
    out = np.full((nmask, G + 1, n1), INF)
    best = np.empty((G + 1, n1))
    second = np.empty((G + 1, n1))
    pred = np.empty((G + 1, n1), dtype=np.int64)
    banned = np.zeros(n1, dtype=np.bool_)
    for mask in range(nmask):
        banned[:] = False
        for b in range(nm):
            if mask & (1 << b):
                banned[m_nodes[b]] = True
        best[:, :] = INF
        second[:, :] = INF
        pred[:, :] = -1
        for j in range(1, n1):
            if allowed[0, j] and kw[j] <= G:
                _offer(best, pred, second, kw[j], j, cbar[0, j], 0)
        for w in range(G + 1):
            # zero-weight customers relax within the layer until stable
            for sweep in range(2 * n1 + 2):
                changed = False
                for i in range(1, n1):
                    if banned[i]:
                        continue
                    for k in range(1, n1):
                        if kw[k] != 0 or k == i or not allowed[i, k]:
                            continue
                        v = second[w, i] if pred[w, i] == k else best[w, i]
                        if v < INF and _offer(best, pred, second, w, k, v + cbar[i, k], i):
                            changed = True
                if not changed:
                    break
                if sweep == 2 * n1 + 1:
                    for k in range(1, n1):
                        if kw[k] == 0:
                            best[w, k] = -INF
                            second[w, k] = -INF
            for i in range(1, n1):
                if banned[i] or best[w, i] == INF:
                    continue
                for k in range(1, n1):
                    wk = kw[k]
                    if wk == 0 or k == i or w + wk > G or not allowed[i, k]:
                        continue
                    v = second[w, i] if pred[w, i] == k else best[w, i]
                    if v < INF:
                        _offer(best, pred, second, w + wk, k, v + cbar[i, k], i)
        for j in range(n1):
            run = INF
            for w in range(G + 1):
                if best[w, j] < run:
                    run = best[w, j]
                out[mask, w, j] = run
    return out


@njit(cache=True)
def knapsack(values, weights, visited, cap):
    """0-1 knapsack over unvisited customers with integer weights."""
    if cap < 0:
        cap = 0
    dp = np.zeros(cap + 1)
    extra = 0.0
    for j in range(1, values.size):
        if visited[j] or values[j] <= 0.0:
            continue
        wj = weights[j]
        if wj == 0:
            extra += values[j]
            continue
        if wj > cap:
            continue
        vj = values[j]
        for w in range(cap, wj - 1, -1):
            cand = dp[w - wj] + vj
            if cand > dp[w]:
                dp[w] = cand
    return dp[cap] + extra


@njit(cache=True)
def _record(found, route_buf, len_buf, rc_buf, path, depth, rc, cap):
    # keep the ``cap`` most negative reduced costs; route = path reversed
    if found < cap:
        slot = found
    else:
        slot = 0
        worst = rc_buf[0]
        for k in range(1, cap):
            if rc_buf[k] > worst:
                worst = rc_buf[k]
                slot = k
        if rc >= worst:
            return
    for k in range(depth + 1):
        route_buf[slot, k] = path[depth - k]
    len_buf[slot] = depth + 1
    rc_buf[slot] = rc


@njit(cache=True, nogil=True)
def label_dfs(
    root, C, allowed, E, fQ, Q, sup, prb, ns, alpha, beta, R,
    src_of, src_delta, rcsp, mbit, G, use_rcsp, use_kp, kval, kw, order,
    stop_after, cap, max_labels, route_buf, len_buf, rc_buf, stats, bound_log,
):
    """Enumerate elementary routes ending with ``root`` (labels extend backwards).

    ``order[v]`` lists the customers in the order they are tried as
    predecessors of ``v``.

    Returns the number of negative reduced-cost routes recorded (at most ``cap``
    kept).  ``bound_log`` (rows: route-length, bound values) is filled when it has
    rows, for offline validation of the completion bounds.
    """
    n1 = C.shape[0]
    n = n1 - 1
    if not allowed[root, 0]:
        return 0
    path = np.zeros(n1, dtype=np.int64)
    phi = np.empty((n1, Q + 1))
    qv = np.empty(n1)
    zeta = np.empty(n1)
    mmask = np.zeros(n1, dtype=np.int64)
    nxt = np.zeros(n1, dtype=np.int64)
    visited = np.zeros(n1, dtype=np.bool_)
    counts = np.zeros(src_delta.size, dtype=np.int64)
    found = 0
    log_rows = bound_log.shape[0]
    logged = 0

    # root label: the last customer of the route
    path[0] = root
    visited[root] = True
    phi[0, :] = C[root, 0]
    qv[0] = fQ - E[root]
    z = alpha[root] + beta + R[root, 0]
    for t in range(src_of.shape[1]):
        s = src_of[root, t]
        if s < 0:
            break
        counts[s] += 1
    zeta[0] = z
    mmask[0] = (1 << mbit[root]) if mbit[root] >= 0 else 0
    stats[ST_LABELS] += 1
    g = C[0, root] + continuation(phi[0], Q, Q, sup[root], prb[root], ns[root], C[root, 0] + C[0, root])
    if allowed[0, root] and g - z < -RC_EPS:
        _record(found, route_buf, len_buf, rc_buf, path, 0, g - z, cap)
        found += 1
        stats[ST_FOUND] += 1
    b_rcsp = -INF
    b_kp = -INF
    if use_rcsp:
        qq = int(np.floor(qv[0] + E[root] + 1e-9))
        qq = min(max(qq, 0), G)
        b_rcsp = rcsp[mmask[0], qq, root] + alpha[root] + phi[0, Q] - z
    if use_kp:
        b_kp = g - z - knapsack(kval, kw, visited, int(np.floor(qv[0] + 1e-9)))
    if log_rows > 0:
        bound_log[0, 0] = 1
        bound_log[0, 1] = b_rcsp
        bound_log[0, 2] = b_kp
        bound_log[0, 3] = root
        logged = 1
    if b_rcsp >= -RC_EPS:
        stats[ST_PRUNED_RCSP] += 1
        return found
    if b_kp >= -RC_EPS:
        stats[ST_PRUNED_KP] += 1
        return found

    depth = 0
    nxt[0] = 0
    while depth >= 0:
        if stop_after > 0 and found >= stop_after:
            break
        if max_labels > 0 and stats[ST_LABELS] >= max_labels:
            stats[ST_TRUNCATED] = 1
            break
        v = path[depth]
        pos = nxt[depth]
        i = 0
        # find next feasible extension candidate
        while pos < n:
            c = order[v, pos]
            if (not visited[c]) and allowed[c, v] and E[c] <= qv[depth] + 1e-9:
                i = c
                break
            pos += 1
        if i == 0 or depth + 1 >= n1:
            # backtrack
            visited[v] = False
            for t in range(src_of.shape[1]):
                s = src_of[v, t]
                if s < 0:
                    break
                counts[s] -= 1
            depth -= 1
            continue
        nxt[depth] = pos + 1
        d1 = depth + 1
        dp_step_values(phi[depth], Q, C[i, v], C[i, 0], C[0, v], C[v, 0], sup[v], prb[v], ns[v], phi[d1])
        z = zeta[depth] + alpha[i] + R[i, v]
        for t in range(src_of.shape[1]):
            s = src_of[i, t]
            if s < 0:
                break
            counts[s] += 1
            if counts[s] == 2:
                z += src_delta[s]
        zeta[d1] = z
        qv[d1] = qv[depth] - E[i]
        mmask[d1] = mmask[depth] | ((1 << mbit[i]) if mbit[i] >= 0 else 0)
        path[d1] = i
        visited[i] = True
        stats[ST_LABELS] += 1
        g = C[0, i] + continuation(phi[d1], Q, Q, sup[i], prb[i], ns[i], C[i, 0] + C[0, i])
        if allowed[0, i] and g - z < -RC_EPS:
            _record(found, route_buf, len_buf, rc_buf, path, d1, g - z, cap)
            found += 1
            stats[ST_FOUND] += 1
        alive = True
        b_rcsp = -INF
        b_kp = -INF
        if use_rcsp:
            qq = int(np.floor(qv[d1] + E[i] + 1e-9))
            qq = min(max(qq, 0), G)
            b_rcsp = rcsp[mmask[d1], qq, i] + alpha[i] + phi[d1, Q] - z
        if use_kp:
            b_kp = g - z - knapsack(kval, kw, visited, int(np.floor(qv[d1] + 1e-9)))
        if logged < log_rows:
            bound_log[logged, 0] = d1 + 1
            bound_log[logged, 1] = b_rcsp
            bound_log[logged, 2] = b_kp
            for k in range(d1 + 1):
                bound_log[logged, 3 + k] = path[d1 - k]
            logged += 1
        if b_rcsp >= -RC_EPS:
            alive = False
            stats[ST_PRUNED_RCSP] += 1
        elif b_kp >= -RC_EPS:
            alive = False
            stats[ST_PRUNED_KP] += 1
        if alive:
            depth = d1
            nxt[depth] = 0
        else:
            visited[i] = False
            for t in range(src_of.shape[1]):
                s = src_of[i, t]
                if s < 0:
                    break
                counts[s] -= 1
    return found
