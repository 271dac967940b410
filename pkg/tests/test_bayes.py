import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln

from sbpc.bayes import (
    BayesError,
    ExternalFactorPrior,
    PosteriorState,
    convergence_stats,
    exact_update_check,
    moment_matched_prior,
    posterior_update,
    posterior_variance,
    predictive_params,
    predictive_pmf,
    route_cost_or_c,
    simulate_correlated,
)
from sbpc.instance import build_instance
from sbpc.restocking import route_cost_or


def test_prior_validation_and_moments():
    with pytest.raises(BayesError):
        ExternalFactorPrior(0, 1)
    with pytest.raises(BayesError):
        ExternalFactorPrior(1, -1)
    p = ExternalFactorPrior(12, Fraction(1, 12))
    assert p.mean == 1
    assert p.variance == Fraction(1, 12)
    m = moment_matched_prior(1.0, 0.25)
    assert m.k0 == pytest.approx(4.0) and m.s0 == pytest.approx(0.25)


def test_single_update_by_hand():
    st_ = posterior_update(PosteriorState(ExternalFactorPrior(2, Fraction(1, 2))), Fraction(3), 5)
    assert st_.shape == 7
    # s0 / (1 + s0 * mu) = (1/2) / (5/2)
    assert st_.scale == Fraction(1, 5)
    assert st_.mean == Fraction(7, 5)
    assert posterior_variance(st_.prior, 5, 3) == Fraction(7, 25)


def test_update_rejects_bad_observations():
    s = PosteriorState(ExternalFactorPrior(1, 1))
    with pytest.raises(BayesError):
        posterior_update(s, 0, 1)
    with pytest.raises(BayesError):
        posterior_update(s, 1, -1)
    with pytest.raises(BayesError):
        posterior_update(s, 1, 1.5)


@settings(max_examples=200, deadline=None)
@given(
    st.fractions(min_value=Fraction(1, 100), max_value=100),
    st.fractions(min_value=Fraction(1, 100), max_value=10),
    st.lists(st.tuples(st.fractions(min_value=Fraction(1, 10), max_value=200), st.integers(0, 300)), max_size=30),
)
def test_sequential_updates_match_closed_form(k0, s0, obs):
    prior = ExternalFactorPrior(k0, s0)
    mus = [m for m, _ in obs]
    xs = [x for _, x in obs]
    assert exact_update_check(prior, mus, xs)


def test_predictive_params():
    s = PosteriorState(ExternalFactorPrior(3.0, 0.5), observed_sum=4, rate_sum=2.0)
    r, p, rho = predictive_params(s, 6.0)
    assert r == 7.0
    assert rho == pytest.approx(0.5 * 6.0 / 2.0)
    assert p == pytest.approx(rho / (1 + rho))


def nb_logpmf(k, r, rho):
    return gammaln(k + r) - gammaln(r) - gammaln(k + 1) + k * np.log(rho) - (k + r) * np.log1p(rho)


def test_predictive_pmf_matches_formula():
    s = PosteriorState(ExternalFactorPrior(5.0, 0.2), observed_sum=12, rate_sum=8.0)
    d = predictive_pmf(s, 10.0, eps=1e-12)
    r, _, rho = predictive_params(s, 10.0)
    raw = np.exp(nb_logpmf(d.support.astype(float), r, rho))
    assert raw.sum() > 1 - 1e-9
    assert np.allclose(d.probs, raw / raw.sum(), rtol=1e-10, atol=1e-15)
    assert d.mean == pytest.approx(r * rho, rel=1e-8)


def test_predictive_pmf_matches_mixture_sampling():
    rng = np.random.default_rng(0)
    prior = ExternalFactorPrior(4.0, 0.25)
    s = posterior_update(PosteriorState(prior), 20.0, 17)
    mu = 15.0
    chi = rng.gamma(s.shape, s.scale, size=400_000)
    x = rng.poisson(mu * chi)
    d = predictive_pmf(s, mu, eps=1e-6)
    n = x.size
    for k, p in zip(d.support, d.probs):
        if p < 1e-4:
            continue
        cnt = np.count_nonzero(x == k)
        assert abs(cnt - n * p) <= 4 * math.sqrt(n * p * (1 - p))


def truncated_nb(r, rho, eps):
    ks = np.arange(int(r * rho + 20 * math.sqrt(r * rho * (1 + rho)) + 50))
    pmf = np.exp(nb_logpmf(ks.astype(float), r, rho))
    keep = np.flatnonzero(pmf >= eps)
    ks, pmf = ks[keep[0] : keep[-1] + 1], pmf[keep[0] : keep[-1] + 1]
    return list(zip(ks.tolist(), (pmf / pmf.sum()).tolist()))


def correlated_oracle(c, Q, route, mu, k0, s0, eps):
    """Expectimin over outcomes and restocking decisions, tracking (X, M)."""
    H = len(route)

    def serve(k, q, X, M):
        j = route[k]
        rho = s0 * mu[j] / (1 + s0 * M)
        tot = 0.0
        for xi, p in truncated_nb(k0 + X, rho, eps):
            t = max(0, math.ceil((xi - q) / Q))
            tot += p * (t * (c[j][0] + c[0][j]) + after(k, q + t * Q - xi, X + xi, M + mu[j]))
        return tot

    def after(k, q, X, M):
        j = route[k]
        if k == H - 1:
            return c[j][0]
        nxt = route[k + 1]
        return min(c[j][nxt] + serve(k + 1, q, X, M), c[j][0] + c[0][nxt] + serve(k + 1, Q, X, M))

    return c[0][route[0]] + serve(0, Q, 0, 0.0)


@pytest.mark.parametrize("seed", range(6))
def test_correlated_cost_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    mu = rng.uniform(0.5, 2.5, n)
    Q = int(rng.integers(2, 6))
    coords = rng.uniform(0, 20, (n + 1, 2))
    inst = build_instance(list(mu), Q, coords=coords, load_factor=5.0)
    prior = ExternalFactorPrior(float(rng.uniform(2, 6)), float(rng.uniform(0.1, 0.4)))
    rates = np.concatenate([[0.0], mu])
    route = [int(v) for v in rng.permutation(np.arange(1, n + 1))]
    eps = 1e-3
    pol = route_cost_or_c(inst, route, prior, rates, eps=eps)
    ref = correlated_oracle(inst.cost.tolist(), Q, route, rates, prior.k0, prior.s0, eps)
    assert pol.expected_cost == pytest.approx(ref, abs=1e-10)


def test_simulated_mean_matches_expected_cost():
    rng = np.random.default_rng(8)
    mu = np.array([0.0, 6.0, 9.0, 4.0, 7.0])
    inst = build_instance(list(mu[1:]), 15, coords=rng.uniform(0, 30, (5, 2)), load_factor=2.0)
    prior = ExternalFactorPrior(6.0, 1 / 6)
    pol = route_cost_or_c(inst, [3, 1, 4, 2], prior, mu, eps=1e-10)
    chi = rng.gamma(prior.k0, prior.s0, size=200_000)
    d = rng.poisson(mu[[3, 1, 4, 2]][None, :] * chi[:, None])
    costs = simulate_correlated(pol, d)
    se = costs.std(ddof=1) / math.sqrt(costs.size)
    assert abs(costs.mean() - pol.expected_cost) < 3.5 * se


def test_degenerate_prior_recovers_independent_policy():
    rng = np.random.default_rng(2)
    for _ in range(5):
        n = int(rng.integers(1, 5))
        mu = rng.uniform(2, 8, n)
        chi = float(rng.uniform(0.8, 1.2))
        inst = build_instance(list(mu * chi), int(rng.integers(10, 25)), coords=rng.uniform(0, 50, (n + 1, 2)),
                              load_factor=3.0, eps=1e-9)
        route = [int(v) for v in rng.permutation(np.arange(1, n + 1))]
        k0 = 1e9
        g = route_cost_or_c(inst, route, ExternalFactorPrior(k0, chi / k0), np.concatenate([[0], mu]), eps=1e-9)
        assert g.expected_cost == pytest.approx(route_cost_or(inst, route), abs=1e-5)


def test_realised_costs_cover_the_round_trip():
    rng = np.random.default_rng(3)
    mu = np.array([0.0, 8.0, 5.0, 9.0, 6.0])
    inst = build_instance(list(mu[1:]), 14, coords=rng.uniform(0, 40, (5, 2)), load_factor=2.5)
    prior = ExternalFactorPrior(3.0, 1 / 3)
    pol = route_cost_or_c(inst, [1, 2, 3, 4], prior, mu, eps=1e-9)
    chi = rng.gamma(prior.k0, prior.s0, size=100_000)
    d = rng.poisson(mu[1:][None, :] * chi[:, None])
    assert pol.expected_cost > 0
    costs = simulate_correlated(pol, d)
    closed = inst.cost[0, 1] + inst.cost[1, 2] + inst.cost[2, 3] + inst.cost[3, 4] + inst.cost[4, 0]
    # depot detours never shorten the tour on Euclidean costs
    assert np.all(costs >= closed - 1e-9)


def test_route_cost_or_c_validation():
    inst = build_instance([3.0, 4.0], 10, coords=[[0, 0], [1, 0], [0, 1]])
    prior = ExternalFactorPrior(2, 0.5)
    with pytest.raises(BayesError):
        route_cost_or_c(inst, [1, 2], prior, rates=[1.0, 2.0])
    with pytest.raises(BayesError):
        route_cost_or_c(inst, [1, 2], prior, rates=[0.0, 0.0, 2.0])
    with pytest.raises(BayesError):
        route_cost_or_c(inst, [1, 2], ExternalFactorPrior(50, 1.0), rates=[0, 200.0, 200.0], x_cap=100)
    pol = route_cost_or_c(inst, [1, 2], prior)
    with pytest.raises(BayesError):
        simulate_correlated(pol, [[1, 2, 3]])
    with pytest.raises(BayesError):
        simulate_correlated(pol, [[1, -2]])


def test_kept_values_are_monotone_in_capacity():
    inst = build_instance([5.0, 6.0, 4.0], 12, coords=[[0, 0], [3, 4], [6, 0], [2, 7]], load_factor=2.0)
    pol = route_cost_or_c(inst, [1, 2, 3], ExternalFactorPrior(4, 0.25), keep_values=True)
    assert len(pol.values) == 3
    for v in pol.values:
        assert np.all(np.diff(v, axis=0) <= 1e-9)


def test_convergence_stats():
    prior = ExternalFactorPrior(2.0, 0.5)
    out = convergence_stats(prior, 1.3, [50.0] * 200, trials=200, seed=1)
    cf = out["closed_form_variance"]
    assert cf.shape == (201,)
    assert np.all(np.diff(cf) < 0)
    assert cf[100] / cf[10] < 0.2
    assert out["mse_trials"].shape == (200, 201)
    assert np.all(out["mse"] >= out["mse_of_mean"])
    assert out["mse"][200] < out["mse"][10]
    # the average posterior variance tracks the closed form at the expected totals
    assert out["posterior_variance"][200] == pytest.approx(cf[200], rel=0.05)
    with pytest.raises(BayesError):
        convergence_stats(prior, 1.0, [1.0], trials=10)


def test_single_customer_uses_prior_predictive():
    inst = build_instance([6.0], 5, coords=[[0, 0], [3, 4]], load_factor=3.0)
    prior = ExternalFactorPrior(3.0, 0.5)
    pol = route_cost_or_c(inst, [1], prior, eps=1e-6)
    pred = predictive_pmf(PosteriorState(prior), 6.0, eps=1e-6)
    same = build_instance([pred], 5, coords=[[0, 0], [3, 4]], load_factor=3.0)
    assert pol.expected_cost == pytest.approx(route_cost_or(same, [1]), abs=1e-12)


def independent_policy_under_correlation(c, Q, route, mu, k0, s0, eps, restock):
    """Exact expected cost of fixed OR-I decisions when demand follows the correlated model."""
    H = len(route)

    def serve(k, q, X, M):
        j = route[k]
        rho = s0 * mu[j] / (1 + s0 * M)
        tot = 0.0
        for xi, p in truncated_nb(k0 + X, rho, eps):
            t = max(0, math.ceil((xi - q) / Q))
            tot += p * (t * (c[j][0] + c[0][j]) + after(k, q + t * Q - xi, X + xi, M + mu[j]))
        return tot

    def after(k, q, X, M):
        j = route[k]
        if k == H - 1:
            return c[j][0]
        nxt = route[k + 1]
        if restock[k, q]:
            return c[j][0] + c[0][nxt] + serve(k + 1, Q, X, M)
        return c[j][nxt] + serve(k + 1, q, X, M)

    return c[0][route[0]] + serve(0, Q, 0, 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_correlated_policy_beats_independent_decisions(seed):
    from sbpc.instance import build_poisson
    from sbpc.restocking import build_policy

    rng = np.random.default_rng(50 + seed)
    n = 3
    mu = rng.uniform(0.8, 2.5, n)
    Q = int(rng.integers(2, 5))
    coords = rng.uniform(0, 20, (n + 1, 2))
    rates = np.concatenate([[0.0], mu])
    prior = ExternalFactorPrior(float(rng.uniform(1, 4)), float(rng.uniform(0.2, 0.6)))
    eps = 1e-3
    indep = build_instance([build_poisson(m, eps) for m in mu], Q, coords=coords, load_factor=5.0, expected=mu)
    route = [int(v) for v in rng.permutation(np.arange(1, n + 1))]
    pol_i = build_policy(indep, route)
    g_c = route_cost_or_c(indep, route, prior, rates, eps=eps).expected_cost
    fixed = independent_policy_under_correlation(indep.cost.tolist(), Q, route, rates, prior.k0, prior.s0, eps, pol_i.restock)
    assert g_c <= fixed + 1e-10


def test_convergence_at_the_prior_mean():
    prior = ExternalFactorPrior(4.0, 0.25)
    out = convergence_stats(prior, 1.0, [50.0] * 60, trials=400, seed=4)
    assert out["mse"][0] == pytest.approx(prior.variance + (prior.mean - 1.0) ** 2)
    # monotone up to sampling noise
    assert np.all(np.diff(out["mse"]) <= 0.02 * out["mse"][1:])
    assert out["mse"][60] < out["mse"][1] < out["mse"][0]
