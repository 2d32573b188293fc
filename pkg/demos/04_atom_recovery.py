"""Recovering the atom at zero from one generation after a jump.

Conditioned on a large log-mean X > x, the chance that a single individual
leaves at most e^{x(1 + delta)} offspring tends to E[gamma].  Two estimators
are shown: the empirical frequency and the pgf form E[f(1 - e^{-x(1+delta)})].
"""

from bpresim import asymptotics as asy
from bpresim.env_models import PARETO_FRACTIONAL_ATOM, EnvironmentModel
from bpresim.streams import stream

for model in (EnvironmentModel(PARETO_FRACTIONAL_ATOM), EnvironmentModel()):
    for x in (10.0, 25.0, 50.0):
        rep = asy.empirical_gamma_mean(model, x, 200_000, rng=stream(4, int(x)))
        print(f"{model.family:24s} x={x:4.0f}  frequency {rep.indicator.point:.4f}  "
              f"pgf {rep.pgf.point:.4f}  target {rep.target:.2f}")
