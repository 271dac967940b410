"""Learning a shared demand factor along a route.

Part one follows the posterior of the factor as demands are observed.  Part
two compares restocking with and without learning on simulated routes, in
the shape of a savings table.
"""

import numpy as np

from sbpc.bayes import PosteriorState, convergence_stats, posterior_update
from sbpc.sim import DEFAULT_PRIOR, generate_routes, generate_scenarios, compare_policies, savings_table, table_csv

rng = np.random.default_rng(1)
chi = 1.3
state = PosteriorState(DEFAULT_PRIOR)
print("observations  posterior mean  posterior sd")
for t in range(1, 13):
    state = posterior_update(state, 40.0, int(rng.poisson(40.0 * chi)))
    if t in (1, 2, 4, 8, 12):
        print(f"{t:12d}  {float(state.mean):14.4f}  {float(state.variance) ** 0.5:12.4f}")

out = convergence_stats(DEFAULT_PRIOR, chi, np.full(200, 40.0), trials=500, seed=2)
print(f"mean-square error after 10 and 200 customers: {out['mse'][10]:.2e}, {out['mse'][200]:.2e}")

route = generate_routes(8, 1, seed=3, f=1.6)[0]
res = compare_policies(route, generate_scenarios(route, 4000, seed=3))
print(
    f"\n8-customer route: independent {res['mean_or_i']:.1f}, learned {res['mean_or_c']:.1f}, "
    f"saving {res['saving_pct']:.2f}% (paired t p={res['p_value']:.1e})"
)

print()
print(table_csv(savings_table(sizes=[4, 6, 8], factors=(1.3, 1.9), routes=5, scenarios=1000, seed=4), (1.3, 1.9)))
