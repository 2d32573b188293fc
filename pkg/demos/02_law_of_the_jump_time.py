"""Where does the big jump happen for a surviving population?

Harvests exact conditional survivors at n = 60 and compares the law of the
first big-jump time U_n (restricted to j <= 10) with the limit law
E[1 - f_{0,j-1}(gamma)] / K, for both the pure geometric family and the
fractional-atom family.  The same comparison for walks without a descent
below zero uses the limit P(tau > j-1) / E[tau].
"""

from bpresim import asymptotics as asy
from bpresim import montecarlo as mc
from bpresim.env_models import PARETO_FRACTIONAL_ATOM, EnvironmentModel
from bpresim.streams import stream

n = 60
for model in (EnvironmentModel(), EnvironmentModel(PARETO_FRACTIONAL_ATOM)):
    K = asy.const_K(model, 60, 100_000, stream(2, 0))
    law = mc.conditional_un_distribution(model, n, 2000, rng=stream(2, 1))
    limit, _ = asy.yaglom_masses(K, 10)
    emp = law.restricted(10)
    print(f"\n{model.family}: no-big-jump mass {law.none_mass:.3f}, "
          f"TV on j<=10 = {mc.restricted_tv(law.masses, limit, 10):.3f}")
    for j in range(1, 11):
        print(f"  j={j:2d}  empirical {emp[j - 1]:.4f}  limit {limit[j - 1] / limit.sum():.4f}")

model = EnvironmentModel()
E = asy.const_E_tau(model, 400_000, rng=stream(2, 2))
walks = mc.conditional_un_distribution(model, n, 2000, rng=stream(2, 3), condition="tau")
print(f"\nno descent by n: E[tau] = {E.value:.4f}, "
      f"TV on j<=10 = {mc.restricted_tv(walks.masses, asy.durrett_masses(E, 10), 10):.3f}")
