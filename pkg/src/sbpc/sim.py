"""Monte Carlo comparison of restocking under independent vs. learned demand.

Routes are TSP tours through random customers on a 1000 x 1000 grid with the
depot in the south-west corner.  Each scenario draws one external factor
``chi ~ U[0.5, 1.5]`` shared by all customers, then Poisson demands with
rates ``mu_i * chi``.  The independent policy (OR-I) plans with
``Poisson(mu_i)``; the correlated policy (OR-C) updates a gamma prior on the
factor as demands are observed.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .bayes import ExternalFactorPrior, route_cost_or_c, simulate_correlated
from .instance import DEFAULT_EPS, StochasticInstance, build_instance
from .restocking import build_policy, simulate_many

__all__ = [
    "SimRoute",
    "Scenarios",
    "GRID",
    "DEFAULT_PRIOR",
    "TABLE_FACTORS",
    "held_karp",
    "generate_routes",
    "generate_scenarios",
    "compare_policies",
    "savings_table",
    "table_csv",
]

GRID = 1000
MU_RANGE = (10.0, 100.0)
CHI_RANGE = (0.5, 1.5)
# gamma with the mean (1) and variance (1/12) of U[0.5, 1.5]
DEFAULT_PRIOR = ExternalFactorPrior(12.0, 1.0 / 12.0)
TABLE_FACTORS = (1.3, 1.6, 1.9, 2.5)


def held_karp(cost: np.ndarray) -> tuple[list[int], float]:
    """Exact shortest tour from node 0 through all other nodes and back.

    Returns the visiting order (without the depot) and the tour length.
    Ties are broken towards the lexicographically smallest order.
    """
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0] - 1
    if n == 0:
        return [], 0.0
    full = 1 << n
    dp = np.full((full, n), np.inf)
    parent = np.full((full, n), -1, dtype=np.int64)
    for j in range(n):
        dp[1 << j, j] = c[0, j + 1]
    for mask in range(1, full):
        row = dp[mask]
        for j in range(n):
            if not mask >> j & 1 or not np.isfinite(row[j]):
                continue
            base = row[j]
            for k in range(n):
                if mask >> k & 1:
                    continue
                nm = mask | 1 << k
                v = base + c[j + 1, k + 1]
                if v < dp[nm, k] - 1e-12:
                    dp[nm, k] = v
                    parent[nm, k] = j
    last = dp[full - 1] + c[1:, 0]
    j = int(np.argmin(last))
    length = float(last[j])
    order, mask = [], full - 1
    while j >= 0:
        order.append(j + 1)
        pj = parent[mask, j]
        mask ^= 1 << j
        j = int(pj)
    order.reverse()
    return order, length


@dataclass(frozen=True, eq=False)
class SimRoute:
    """A TSP route; customers are numbered 1..n in visiting order."""

    coords: np.ndarray
    rates: np.ndarray
    capacity: int
    load_factor: float
    tour_length: float

    @property
    def n(self) -> int:
        return self.rates.size - 1

    @property
    def order(self) -> tuple:
        return tuple(range(1, self.n + 1))

    def instance(self, eps: float = DEFAULT_EPS) -> StochasticInstance:
        """Instance with independent ``Poisson(mu_i)`` demands (the OR-I view)."""
        # the load limit never binds on a fixed route
        f = max(self.load_factor, float(self.rates.sum()) / self.capacity + 1.0)
        return build_instance(list(self.rates[1:]), self.capacity, coords=self.coords, load_factor=f, eps=eps)


def _route_rng(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([0 if seed is None else int(seed), *key]))


def generate_routes(n: int, count: int, seed: int | None = 0, f: float = 1.6) -> list[SimRoute]:
    if not 3 <= n <= 15:
        raise ValueError(f"route size must lie in [3, 15], got {n}")
    if count < 1:
        raise ValueError("count must be positive")
    if f < 1:
        raise ValueError("load factor must be at least 1")
    out = []
    for k in range(count):
        rng = _route_rng(seed, n, k)
        pts = rng.integers(0, GRID + 1, size=(n, 2)).astype(np.float64)
        mu = rng.uniform(*MU_RANGE, size=n)
        coords = np.vstack([[0.0, 0.0], pts])
        diff = coords[:, None, :] - coords[None, :, :]
        cost = np.sqrt((diff**2).sum(axis=2))
        order, length = held_karp(cost)
        idx = [0] + order
        coords = coords[idx]
        rates = np.concatenate([[0.0], mu[np.asarray(order) - 1]])
        Q = max(1, int(round(mu.sum() / f)))
        out.append(SimRoute(coords, rates, Q, float(f), length))
    return out


@dataclass(frozen=True, eq=False)
class Scenarios:
    chi: np.ndarray
    demands: np.ndarray

    def __len__(self) -> int:
        return int(self.chi.size)


def generate_scenarios(route: SimRoute, count: int, seed: int | None = 0, chi: float | None = None) -> Scenarios:
    """Correlated demand scenarios; ``chi`` pins the factor instead of drawing it."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = _route_rng(seed, route.n, 7919)
    if chi is None:
        chis = rng.uniform(*CHI_RANGE, size=count)
    else:
        chis = np.full(count, float(chi))
    demands = rng.poisson(np.outer(chis, route.rates[1:]))
    return Scenarios(chis, demands.astype(np.int64))


def compare_policies(
    route: SimRoute,
    scenarios: Scenarios,
    prior: ExternalFactorPrior = DEFAULT_PRIOR,
    eps: float = DEFAULT_EPS,
) -> dict:
    """Run OR-I and OR-C on the same scenarios."""
    d = np.asarray(scenarios.demands)
    if d.ndim != 2 or d.shape[1] != route.n:
        raise ValueError("scenario length does not match the route")
    inst = route.instance(eps)
    pol_i = build_policy(inst, route.order)
    pol_c = route_cost_or_c(inst, route.order, prior, route.rates, eps=eps)
    cost_i = simulate_many(pol_i, d)
    cost_c = simulate_correlated(pol_c, d)
    mi, mc = float(cost_i.mean()), float(cost_c.mean())
    diff = cost_i - cost_c
    if np.allclose(diff, diff[0]):
        p = 1.0 if diff[0] <= 0 else 0.0
    else:
        p = float(stats.ttest_rel(cost_i, cost_c, alternative="greater").pvalue)
    return {
        "mean_or_i": mi,
        "mean_or_c": mc,
        "expected_or_i": pol_i.expected_cost,
        "expected_or_c": pol_c.expected_cost,
        "saving_pct": 100.0 * (mi - mc) / mi,
        "p_value": p,
        "costs_or_i": cost_i,
        "costs_or_c": cost_c,
    }


def savings_table(
    sizes: Sequence[int] = range(3, 16),
    factors: Sequence[float] = TABLE_FACTORS,
    routes: int = 20,
    scenarios: int = 5000,
    seed: int | None = 0,
    prior: ExternalFactorPrior = DEFAULT_PRIOR,
    eps: float = DEFAULT_EPS,
) -> list[dict]:
    """Average and maximum per-route savings for each (n, f) cell."""
    rows = []
    for n in sizes:
        row = {"n": int(n)}
        for fi, f in enumerate(factors):
            sav = []
            for k, r in enumerate(generate_routes(n, routes, seed=_cell_seed(seed, fi), f=f)):
                sc = generate_scenarios(r, scenarios, seed=_cell_seed(seed, fi) * 1000 + k)
                sav.append(compare_policies(r, sc, prior, eps)["saving_pct"])
            row[f] = (float(np.mean(sav)), float(np.max(sav)))
        rows.append(row)
    return rows


def _cell_seed(seed, fi: int) -> int:
    return (0 if seed is None else int(seed)) * 16 + fi


def table_csv(rows: list[dict], factors: Sequence[float] = TABLE_FACTORS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n"] + list(itertools.chain.from_iterable((f"Avg% f={f:g}", f"Max% f={f:g}") for f in factors)))
    for row in rows:
        cells = [row["n"]]
        for f in factors:
            avg, mx = row[f]
            cells += [f"{avg:.2f}", f"{mx:.2f}"]
        w.writerow(cells)
    return buf.getvalue()
