"""What does a surviving population look like after its big jump?

First, the share of survivors at n = 100 whose jump is early (U_n < log n)
and produces a family of size at least e^{n(a + 3/log n)}.  Then, among
survivors conditioned on exactly that event, the fluctuations of
log Z around the walk: W(t) should look like a Brownian motion and
R(t) = Z / (Z_U e^{S - S_U}) should stay close to one.
"""

import math

from bpresim import montecarlo as mc
from bpresim.env_models import EnvironmentModel
from bpresim.streams import stream

model = EnvironmentModel()
n = 100
cfg = mc.BigJumpConfig()
surv = mc.harvest_survivors(model, n, 2000, stream(3, 0), cfg=cfg)
st = mc.explosion_statistics(model, n, surv, cfg, stream(3, 1))
print(f"early jump {st.early:.3f}, explosion {st.explosion:.3f}, both {st.both:.3f} "
      f"(the explosion level needs a jump of size about {n * (model.a + cfg.delta(n)):.0f})")

cond = mc.harvest_survivors(model, n, 2000, stream(3, 2), cfg=cfg, condition="explosion")
rep = mc.flt_suite(model, n, cond)
print(f"{rep.n_survivors} conditioned survivors ({rep.n_capped} beyond exact integer range)")
print(f"KS W(1) vs N(0,1): {rep.ks_w1[0]:.3f}; KS W(1)-W(0.2) vs N(0,0.8): {rep.ks_increment[0]:.3f}")
print(f"corr(W(0.5), W(1)) = {rep.corr_half_one:.3f} (Brownian value {math.sqrt(0.5):.3f})")
print(f"max |mean R(t) - 1| = {rep.ratio_max_dev:.2e}")
