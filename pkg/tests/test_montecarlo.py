import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bpresim import montecarlo as mc
from bpresim.env_models import EnvironmentModel
from bpresim.errors import ConfigError
from bpresim.streams import run_tasks, stream

MODEL = EnvironmentModel()


@settings(max_examples=50, deadline=None)
@given(
    a=st.lists(st.floats(-10, 10), min_size=2, max_size=30),
    b=st.lists(st.floats(-10, 10), min_size=2, max_size=30),
    c=st.lists(st.floats(-10, 10), min_size=2, max_size=30),
)
def test_merge_is_associative_and_exact(a, b, c):
    ea, eb, ec = (mc.Estimate.from_samples(v) for v in (a, b, c))
    left = ea.merge(eb).merge(ec)
    right = ea.merge(eb.merge(ec))
    full = mc.Estimate.from_samples(a + b + c)
    for e in (left, right):
        assert e.point == pytest.approx(full.point, abs=1e-9)
        assert e.stderr == pytest.approx(full.stderr, rel=1e-7, abs=1e-9)
        assert e.n_samples == full.n_samples


def test_binomial_merge_and_zero_flag():
    e = mc.Estimate.from_binomial(0, 100)
    assert "zero_successes" in e.flags
    assert e.ci95[0] == 0.0 and e.ci95[1] > 0.0
    m = mc.Estimate.from_binomial(3, 100).merge(mc.Estimate.from_binomial(5, 300))
    assert m.point == pytest.approx(8 / 400) and m.successes == 8


def test_ks_statistic_known_value():
    # a sample sitting at the quartiles of U(0,1)
    d, p = mc.ks_statistic(np.array([0.125, 0.375, 0.625, 0.875] * 2), stats.uniform())
    assert d == pytest.approx(0.125)
    assert 0 < p <= 1
    with pytest.raises(ConfigError):
        mc.ks_statistic([0.1, 0.2], stats.uniform())


def test_total_variation():
    assert mc.total_variation([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.5)
    assert mc.restricted_tv([0.2, 0.2, 0.6], [0.1, 0.1, 0.0], 2) == 0.0


def test_bigjump_config_conditions():
    cfg = mc.BigJumpConfig()
    assert cfg.violations([40, 60, 80, 100]) == []
    assert cfg.jmax(30) == 30 and mc.BigJumpConfig(j_max=5).jmax(30) == 5
    with pytest.raises(ConfigError):
        mc.BigJumpConfig(delta_scale=1.0).check([40, 60])
    with pytest.raises(ConfigError):
        mc.BigJumpConfig(h_form="linear", h_scale=0.6).check([40])


def test_run_tasks_independent_of_workers():
    def draw(rng, k):
        return rng.random(k).sum()

    tasks = [(3,), (5,), (2,)]
    assert run_tasks(draw, tasks, stream(1), 1) == run_tasks(draw, tasks, stream(1), 1)


def test_naive_estimator_reproducible_across_workers():
    e1 = mc.estimate_survival_naive(MODEL, 8, 60_000, stream(2), workers=1)
    e2 = mc.estimate_survival_naive(MODEL, 8, 60_000, stream(2), workers=2)
    assert e1 == e2


def test_bigjump_matches_naive_at_small_n():
    n = 10
    naive = mc.estimate_survival_naive(MODEL, n, 400_000, stream(3))
    res = mc.estimate_survival_bigjump(MODEL, n, 100_000, rng=stream(4))
    se = math.hypot(naive.stderr, res.estimate.stderr)
    assert abs(naive.point - res.estimate.point) < 4 * se
    assert res.estimate.point == pytest.approx(res.jump_part.point + res.remainder.point)
    assert res.remainder.point <= res.remainder_bound.point + 4 * res.remainder_bound.stderr


def test_simulated_and_quenched_bigjump_agree():
    n = 12
    q = mc.estimate_survival_bigjump(MODEL, n, 60_000, rng=stream(5))
    s = mc.estimate_survival_bigjump(MODEL, n, 60_000, rng=stream(6), quenched=False)
    assert abs(q.estimate.point - s.estimate.point) < 4 * math.hypot(q.estimate.stderr, s.estimate.stderr)
    assert s.estimate.stderr > q.estimate.stderr


def test_tau_tail_matches_naive_walks():
    n = 10
    x = MODEL.sample_x(stream(7), 400_000 * n)[0].reshape(-1, n)
    emp = (np.cumsum(x, axis=1).min(axis=1) >= 0).mean()
    res = mc.estimate_tau_tail(MODEL, n, 100_000, rng=stream(8))
    se = math.hypot(math.sqrt(emp * (1 - emp) / x.shape[0]), res.estimate.stderr)
    assert abs(emp - res.estimate.point) < 4 * se


def test_harvest_un_law_matches_naive():
    n = 8
    is_ = mc.harvest_survivors(MODEL, n, 3000, stream(9), cfg=mc.BigJumpConfig())
    nv = mc.harvest_survivors(MODEL, n, 3000, stream(10), method="naive")
    assert is_.size >= 3000 and nv.size >= 3000
    # the big-jump sample covers U_n <= n; compare the shape there
    p = np.bincount(is_.u_n, minlength=n + 1)[1:]
    q = np.bincount(nv.u_n[nv.u_n > 0], minlength=n + 1)[1:]
    assert mc.total_variation(p / p.sum(), q / q.sum()) < 0.06
    assert (nv.z[:, -1] > 0).all() and (is_.z[:, -1] > 0).all()


def test_conditional_un_distribution_sums_to_one():
    law = mc.conditional_un_distribution(MODEL, 10, 1000, rng=stream(11), remainder_samples=50_000)
    assert law.masses.sum() + law.none_mass == pytest.approx(1.0)
    assert 0 < law.none_mass < 1
    assert law.restricted(5).sum() == pytest.approx(1.0)


def test_explosion_harvest_meets_its_condition():
    cfg = mc.BigJumpConfig()
    n = 40
    smp = mc.harvest_survivors(MODEL, n, 100, stream(12), cfg=cfg, condition="explosion")
    assert (smp.u_n < cfg.h(n)).all()
    assert (smp.log_n_big >= n * (MODEL.a + cfg.delta(n))).all()


def test_flt_sample_starts_at_the_jump():
    smp = mc.harvest_survivors(MODEL, 40, 200, stream(13), condition="explosion")
    f = mc.flt_sample(MODEL, smp)
    assert np.allclose(f.ratio[:, 0], 1.0) and np.allclose(f.clt[:, 0], 0.0)


def test_negative_part_mixture_matches_plain_mc():
    n = 10
    est = mc.negative_part_expectation(MODEL, n, 200_000, stream(14))
    x = MODEL.sample_x(stream(15), 400_000 * n)[0].reshape(-1, n)
    s = x.sum(axis=1)
    v = np.where(s < 0, np.exp(s), 0.0)
    se = math.hypot(v.std() / math.sqrt(v.size), est.stderr)
    assert abs(v.mean() - est.point) < 4 * se
