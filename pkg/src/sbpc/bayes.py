"""Gamma-Poisson external-factor demand model and the correlated restocking DP.

Customer ``i`` has demand ``Poisson(mu_i * chi)`` where the common factor
``chi`` is unknown with a ``Gamma(k0, s0)`` prior (shape, scale).  After
observing demands ``x_1..x_t`` at customers with rates ``mu_1..mu_t`` the
factor is ``Gamma(k0 + X, s0 / (1 + s0 * M))`` with ``X = sum x`` and
``M = sum mu``, and the next demand is negative binomial.  Only ``(X, M)``
matters, which keeps the restocking DP two-dimensional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .instance import DEFAULT_EPS, DemandDistribution, StochasticInstance
from .restocking import check_route

__all__ = [
    "BayesError",
    "ExternalFactorPrior",
    "PosteriorState",
    "CorrelatedPolicy",
    "posterior_update",
    "predictive_params",
    "predictive_pmf",
    "route_cost_or_c",
    "simulate_correlated",
    "posterior_variance",
    "convergence_stats",
    "moment_matched_prior",
    "exact_update_check",
]


class BayesError(ValueError):
    pass


@dataclass(frozen=True)
class ExternalFactorPrior:
    k0: Real
    s0: Real

    def __post_init__(self):
        if not (self.k0 > 0 and self.s0 > 0):
            raise BayesError(f"prior shape and scale must be positive, got k0={self.k0}, s0={self.s0}")

    @property
    def mean(self):
        return self.k0 * self.s0

    @property
    def variance(self):
        return self.k0 * self.s0 * self.s0


def moment_matched_prior(mean: float, variance: float) -> ExternalFactorPrior:
    """Gamma prior with the given mean and variance."""
    return ExternalFactorPrior(mean * mean / variance, variance / mean)


@dataclass(frozen=True)
class PosteriorState:
    """Knowledge about the factor after some customers were served.

    Works with ``Fraction`` inputs for exact arithmetic.
    """

    prior: ExternalFactorPrior
    observed_sum: int = 0
    rate_sum: Real = 0

    def __post_init__(self):
        if self.observed_sum < 0 or self.rate_sum < 0:
            raise BayesError("observed demand and rate totals must be nonnegative")

    @property
    def shape(self):
        return self.prior.k0 + self.observed_sum

    @property
    def scale(self):
        return self.prior.s0 / (1 + self.rate_sum * self.prior.s0)

    @property
    def mean(self):
        return self.shape * self.scale

    @property
    def variance(self):
        return self.shape * self.scale * self.scale


def posterior_update(state: PosteriorState, mu: Real, x: int) -> PosteriorState:
    if not mu > 0:
        raise BayesError(f"demand rate must be positive, got {mu}")
    if x < 0 or int(x) != x:
        raise BayesError(f"observed demand must be a nonnegative integer, got {x}")
    return PosteriorState(state.prior, state.observed_sum + int(x), state.rate_sum + mu)


def predictive_params(state: PosteriorState, mu: Real):
    """(r, p, rho): negative-binomial failures parameter, success probability and rho."""
    if not mu > 0:
        raise BayesError(f"demand rate must be positive, got {mu}")
    s0 = state.prior.s0
    rho = s0 * mu / (1 + s0 * state.rate_sum)
    return state.shape, rho / (1 + rho), rho


def _nb_truncated(r: float, rho: float, eps: float):
    # scipy's nbinom(n, p) counts failures before n successes with success prob p;
    # the predictive has pmf ~ p^x (1-p)^r with p = rho / (1 + rho)
    mean = r * rho
    sd = math.sqrt(r * rho * (1.0 + rho))
    hi = int(math.ceil(mean + 14.0 * sd + 40.0))
    ks = np.arange(hi + 1)
    pmf = stats.nbinom.pmf(ks, r, 1.0 / (1.0 + rho))
    keep = pmf >= eps
    if not keep.any():
        keep = pmf >= pmf.max() * (1.0 - 1e-12)
    idx = np.flatnonzero(keep)
    lo, up = idx[0], idx[-1]
    w = pmf[lo : up + 1]
    w = w / w.sum()
    return ks[lo : up + 1], w


def predictive_pmf(state: PosteriorState, mu: Real, eps: float = DEFAULT_EPS) -> DemandDistribution:
    r, _, rho = predictive_params(state, mu)
    sup, w = _nb_truncated(float(r), float(rho), eps)
    return DemandDistribution.from_pmf(sup, w)


@dataclass(frozen=True, eq=False)
class CorrelatedPolicy:
    """Optimal restocking under the external-factor model for one route.

    ``restock[k, q, X - lows[k]]`` decides whether to replenish between
    positions ``k`` and ``k+1`` with residual capacity ``q`` and accumulated
    demand ``X``.  ``values[k]`` (when kept) is the matching cost-to-go table.
    """

    route: np.ndarray
    capacity: int
    cost_matrix: np.ndarray
    expected_cost: float
    restock: np.ndarray
    lows: np.ndarray
    widths: np.ndarray
    values: tuple | None = None

    @property
    def length(self) -> int:
        return int(self.route.size)


def route_cost_or_c(
    inst: StochasticInstance,
    route: Sequence[int],
    prior: ExternalFactorPrior,
    rates: Sequence[float] | None = None,
    eps: float = DEFAULT_EPS,
    x_cap: int = 50_000,
    keep_values: bool = False,
) -> CorrelatedPolicy:
    """Expected cost of ``route`` under optimal restocking with learned demand.

    ``rates`` is indexed by node (defaults to the instance's expected
    demands).  Raises :class:`BayesError` when the accumulated-demand range
    would exceed ``x_cap``.
    """
    r = check_route(inst, route)
    mu = np.asarray(inst.expected if rates is None else rates, dtype=np.float64)
    if mu.shape[0] != inst.n + 1:
        raise BayesError("rates must be given for every node (index 0 is the depot)")
    if np.any(mu[r] <= 0):
        raise BayesError("every customer on the route needs a positive rate")
    Q, c, H = inst.capacity, inst.cost, r.size
    k0, s0 = float(prior.k0), float(prior.s0)

    # forward pass: accumulated-demand range after each position and the
    # predictive pmfs of the next customer for each X in that range
    preds = []
    lows = [0]
    highs = [0]
    msum = 0.0
    for k in range(H):
        rho = s0 * mu[r[k]] / (1.0 + s0 * msum)
        lo, hi = lows[-1], highs[-1]
        rows = [_nb_truncated(k0 + X, rho, eps) for X in range(lo, hi + 1)]
        smax = max(s.size for s, _ in rows)
        sup = np.zeros((len(rows), smax), dtype=np.int64)
        prb = np.zeros((len(rows), smax))
        ns = np.zeros(len(rows), dtype=np.int64)
        nlo, nhi = math.inf, -1
        for t, (s, w) in enumerate(rows):
            sup[t, : s.size] = s
            prb[t, : s.size] = w
            ns[t] = s.size
            nlo = min(nlo, lo + t + int(s[0]))
            nhi = max(nhi, lo + t + int(s[-1]))
        if nhi > x_cap:
            raise BayesError(
                f"accumulated demand range reaches {nhi} after {k + 1} customers, above the cap {x_cap}"
            )
        preds.append((sup, prb, ns))
        lows.append(int(nlo))
        highs.append(int(nhi))
        msum += mu[r[k]]

    # lows[k+1] / highs[k+1]: range of X once position k is served
    phi = np.full((Q + 1, highs[H] - lows[H] + 1), c[r[H - 1], 0])
    tables = [phi] if keep_values else None
    width = max(highs[k + 1] - lows[k + 1] + 1 for k in range(max(H - 1, 1)))
    restock = np.zeros((max(H - 1, 1), Q + 1, width), dtype=np.bool_)
    for k in range(H - 2, -1, -1):
        i, j = r[k], r[k + 1]
        sup, prb, ns = preds[k + 1]
        nx = ns.size
        out = np.empty((Q + 1, nx))
        dec = np.zeros((Q + 1, nx), dtype=np.bool_)
        _kernels.corr_step(phi, lows[k + 2], Q, c[i, j], c[i, 0], c[0, j], c[j, 0], sup, prb, ns, lows[k + 1], out, dec)
        restock[k, :, :nx] = dec
        phi = out
        if keep_values:
            tables.insert(0, out)
    # first customer: X = 0, predictive under the prior
    sup, prb, ns = preds[0]
    v1 = r[0]
    trip = c[v1, 0] + c[0, v1]
    g = c[0, v1]
    for s in range(ns[0]):
        xi = int(sup[0, s])
        t = _kernels.trips(xi, Q, Q)
        g += prb[0, s] * (t * trip + phi[Q + Q * t - xi, xi - lows[1]])
    widths = np.array([highs[k + 1] - lows[k + 1] + 1 for k in range(max(H - 1, 1))], dtype=np.int64)
    r.setflags(write=False)
    return CorrelatedPolicy(
        r, Q, inst.cost, float(g), restock, np.asarray(lows[1 : max(H, 2)], dtype=np.int64), widths,
        tuple(tables) if keep_values else None,
    )


def simulate_correlated(policy: CorrelatedPolicy, scenarios, costs=None) -> np.ndarray:
    """Realised costs of executing a correlated policy on demand scenarios (rows)."""
    d = np.ascontiguousarray(scenarios, dtype=np.int64)
    if d.ndim == 1:
        d = d.reshape(1, -1)
    if d.shape[1] != policy.length:
        raise BayesError("each scenario needs exactly one demand per route position")
    if np.any(d < 0):
        raise BayesError("realised demands must be nonnegative")
    c = policy.cost_matrix if costs is None else np.asarray(costs, dtype=np.float64)
    return _kernels.simulate_corr_batch(policy.route, c, policy.capacity, policy.restock, policy.lows, policy.widths, d)


def posterior_variance(prior: ExternalFactorPrior, observed_sum, rate_sum):
    """Closed-form variance of the factor given accumulated demand and rates."""
    return (prior.k0 + observed_sum) * (prior.s0 / (1 + rate_sum * prior.s0)) ** 2


def convergence_stats(
    prior: ExternalFactorPrior,
    true_chi: float,
    rates: Sequence[float],
    trials: int,
    seed: int | None = None,
) -> dict:
    """Mean-square convergence of the factor estimate along a customer sequence.

    Entry ``t`` of each array refers to the knowledge after ``t`` customers
    (``t = 0`` is the prior).  ``mse_trials[trial, t]`` is
    ``E[(chi_hat - true_chi)^2 | data]`` (posterior variance plus squared bias
    of the posterior mean); ``mse`` averages it over trials and
    ``closed_form_variance`` evaluates the variance formula at the expected
    demand totals.
    """
    if trials < 100:
        raise BayesError("at least 100 trials are needed")
    mu = np.asarray(rates, dtype=np.float64)
    if np.any(mu <= 0):
        raise BayesError("rates must be positive")
    rng = np.random.default_rng(seed)
    xs = rng.poisson(mu * true_chi, size=(trials, mu.size))
    X = np.concatenate([np.zeros((trials, 1)), np.cumsum(xs, axis=1)], axis=1)
    M = np.concatenate([[0.0], np.cumsum(mu)])
    k0, s0 = float(prior.k0), float(prior.s0)
    scale = s0 / (1.0 + s0 * M)
    mean = (k0 + X) * scale
    var = (k0 + X) * scale * scale
    mse_trials = var + (mean - true_chi) ** 2
    return {
        "steps": np.arange(mu.size + 1),
        "mse_trials": mse_trials,
        "mse": mse_trials.mean(axis=0),
        "mse_of_mean": ((mean - true_chi) ** 2).mean(axis=0),
        "posterior_variance": var.mean(axis=0),
        "closed_form_variance": (k0 + true_chi * M) * scale * scale,
    }


def exact_update_check(prior: ExternalFactorPrior, mus: Sequence[Fraction], xs: Sequence[int]) -> bool:
    """Sequential updates agree exactly with the closed form (rational inputs)."""
    st = PosteriorState(prior)
    for m, x in zip(mus, xs):
        st = posterior_update(st, m, x)
    shape = prior.k0 + sum(xs)
    scale = prior.s0 / (1 + prior.s0 * sum(mus, Fraction(0)))
    return st.shape == shape and st.scale == scale
