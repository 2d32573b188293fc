"""How fast does P(Z_n > 0) approach K A(na)?

Runs the big-jump importance sampler for a range of n under the default
Pareto-geometric environment and splits each estimate into the part with a
big increment among the first j_max steps and the no-big-jump remainder.
The ratio to the limit shrinks with n, but slowly: the remainder is still a
sizeable share at n = 80.
"""

from bpresim import asymptotics as asy
from bpresim import montecarlo as mc
from bpresim.env_models import EnvironmentModel
from bpresim.streams import stream

model = EnvironmentModel()
K = asy.const_K(model, 60, 100_000, stream(1, 0))
print(f"a = {model.a}, sigma^2 = {model.sigma2}, K = {K.value:.4f} (+ tail <= {K.truncation_bound:.2e})")
print(f"{'n':>4} {'P(Z_n>0)':>12} {'rel.se':>7} {'jump':>12} {'remainder':>12} {'ratio':>6}")
for n in (20, 40, 60, 80):
    res = mc.estimate_survival_bigjump(model, n, 300_000, rng=stream(1, n))
    ratio = res.estimate.point / asy.theoretical_survival(model, K, n)
    print(
        f"{n:>4} {res.estimate.point:12.4e} {res.estimate.relative_stderr:7.2%} "
        f"{res.jump_part.point:12.4e} {res.remainder.point:12.4e} {ratio:6.3f}"
    )
