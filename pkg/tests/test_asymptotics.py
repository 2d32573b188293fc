import math

import numpy as np
import pytest

from bpresim import asymptotics as asy
from bpresim.env_models import PARETO_FRACTIONAL_ATOM, EnvironmentModel, FixedEnvironment, OffspringLaw
from bpresim.errors import ConfigError
from bpresim.streams import stream

MODEL = EnvironmentModel()


def test_constant_report_rejects_negative_bound():
    with pytest.raises(ConfigError):
        asy.ConstantReport("K", 1.0, 10, -1e-3, 0.0)


def test_K_for_fixed_environment_is_the_series():
    law = OffspringLaw.geometric(0.35)
    rep = asy.const_K(FixedEnvironment(law), 50, 100, stream(1))
    q, total = 0.0, 0.0
    for _ in range(51):
        total += 1 - q
        q = float(law.pgf(q))
    assert rep.value == pytest.approx(total, rel=1e-12)
    assert rep.mc_stderr == pytest.approx(0.0, abs=1e-12)
    assert rep.truncation_bound < 1e-8


def test_K_terms_and_bound():
    rep = asy.const_K(MODEL, 30, 20_000, stream(2))
    assert rep.terms.size == 31
    assert rep.terms[0] == pytest.approx(1.0)
    assert np.all(np.diff(rep.terms) <= 0)
    assert rep.truncation_bound > 0
    fa = asy.const_K(EnvironmentModel(PARETO_FRACTIONAL_ATOM), 0, 1000, stream(3))
    assert fa.value == pytest.approx(0.75)


def test_E_tau_terms_are_the_tail_of_tau():
    rep = asy.const_E_tau(MODEL, 100_000, horizon=200, rng=stream(4))
    assert rep.terms[0] == 1.0
    assert rep.value == pytest.approx(rep.terms.sum(), rel=1e-3)
    # P(tau > 1) = P(X_1 >= 0) = A(0)
    assert rep.terms[1] == pytest.approx(MODEL.tail(0.0), abs=5 * math.sqrt(0.125 * 0.875 / 100_000))


def test_D_is_finite_with_bounded_truncation():
    rep = asy.const_D(MODEL, 40, 50_000, stream(5))
    assert math.isfinite(rep.value) and rep.truncation_bound > 0
    assert asy.tau_tail_law(MODEL, rep, 10) == pytest.approx(math.exp(rep.value) * 7.0**-3)


def test_limit_laws_are_probability_vectors():
    K = asy.const_K(MODEL, 60, 20_000, stream(6))
    masses, rest = asy.yaglom_masses(K, 10)
    assert masses.sum() + rest >= 1.0 - 1e-12
    assert asy.un_yaglom_law(MODEL, K, 1) == pytest.approx(1.0 / K.value)
    E = asy.const_E_tau(MODEL, 50_000, horizon=100, rng=stream(7))
    d = asy.durrett_masses(E, 10)
    assert d[0] == pytest.approx(1.0 / E.value)
    assert d.sum() < 1.0
    with pytest.raises(ConfigError):
        asy.durrett_law(MODEL, 60, 0, E)


def test_theoretical_survival():
    K = asy.ConstantReport("K", 2.0, 0, 0.0, 0.0)
    assert asy.theoretical_survival(MODEL, K, 40) == pytest.approx(2.0 * 22.0**-3)


def test_local_limit_prediction_flags_regime():
    far = asy.local_limit_prediction(MODEL, 30, 40.0)
    near = asy.local_limit_prediction(MODEL, 30, 5.0)
    assert far.uniform_regime and not far.warning
    assert near.warning
    assert far.value == pytest.approx(3 * 30 * MODEL.tail(39.5) / 40.0)
    with pytest.raises(ConfigError):
        asy.local_limit_prediction(MODEL, 30, 40.0, h=0.0)


def test_local_limit_mc_close_to_prediction():
    est = asy.local_limit_mc(MODEL, 30, 40.0, samples=200_000, rng=stream(8))
    pred = asy.local_limit_prediction(MODEL, 30, 40.0).value
    assert est.point / pred == pytest.approx(1.0, abs=0.1)


def test_baxter_rows_are_consistent():
    rows = asy.baxter_check(MODEL, 4, 200_000, stream(9))
    assert len(rows) == 4
    assert all(abs(r.z) < 4.5 for r in rows)


def test_gamma_estimators():
    rep = asy.empirical_gamma_mean(EnvironmentModel(PARETO_FRACTIONAL_ATOM), 25.0, 50_000, rng=stream(10))
    assert rep.indicator.point == pytest.approx(0.25, abs=0.03)
    assert rep.pgf.point == pytest.approx(0.25, abs=0.03)
    assert asy.default_delta(16.0) == -0.25
