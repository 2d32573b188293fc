import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpresim.env_models import (
    FRACTIONAL_ATOM,
    GEOMETRIC,
    POISSON,
    PARETO_FRACTIONAL_ATOM,
    PARETO_POISSON,
    EnvironmentModel,
    FixedEnvironment,
    OffspringLaw,
    eta_values,
    g_term,
    one_minus_pgf,
    sample_environment,
    sample_environment_mixture,
)
from bpresim.errors import ConfigError
from bpresim.streams import stream


def test_default_model_constants():
    m = EnvironmentModel()
    assert m.a == pytest.approx(0.5)
    assert m.sigma2 == pytest.approx(0.75)
    for x in (0.0, 3.0, 25.0, 1e3):
        assert m.tail(x) == pytest.approx((x + 2.0) ** -3, rel=1e-14)
    assert m.tail(-1.5) == 1.0


def test_fractional_atom_drift_includes_gamma():
    m = EnvironmentModel(PARETO_FRACTIONAL_ATOM)
    # E[log(1 - gamma)] for gamma ~ U[0, 1/2]
    e_log = math.log(2) - 1.0  # 2 * int_{1/2}^{1} log u du
    assert m.a == pytest.approx(0.5 - e_log)


def test_fractional_atom_tail_matches_sampling():
    m = EnvironmentModel(PARETO_FRACTIONAL_ATOM)
    x, _ = m.sample_x(stream(3), 400_000)
    for t in (0.0, 2.0, 6.0):
        emp = (x > t).mean()
        se = math.sqrt(emp * (1 - emp) / x.size)
        assert abs(emp - m.tail(t)) < 5 * se


@pytest.mark.parametrize("mode", ["above", "below"])
def test_conditioned_sampling_respects_threshold(mode):
    m = EnvironmentModel()
    x, _ = m.sample_x(stream(4), 10_000, mode=mode, threshold=5.0)
    assert (x > 5.0).all() if mode == "above" else (x <= 5.0).all()


def test_between_mode_window():
    for fam in ("pareto_geometric", PARETO_FRACTIONAL_ATOM):
        x, _ = EnvironmentModel(fam).sample_x(stream(5), 5000, mode="between", threshold=(1.0, 4.0))
        assert (x > 1.0).all() and (x <= 4.0).all()


def test_geometric_eta_is_one():
    x = np.linspace(-5, 5, 11)
    assert np.allclose(eta_values(GEOMETRIC, x, 0.0), 1.0)


def test_poisson_eta_is_half():
    assert np.allclose(eta_values(POISSON, np.array([-2.0, 0.0, 3.0]), 0.0), 0.5)


@pytest.mark.parametrize(
    "law",
    [OffspringLaw.geometric(0.3), OffspringLaw.poisson(1.7), OffspringLaw.fractional_atom(0.2, 0.6)],
)
def test_pmf_moments_match_closed_forms(law):
    pmf = law.pmf(400)
    k = np.arange(pmf.size)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-12)
    assert (k * pmf).sum() == pytest.approx(law.mean, rel=1e-10)
    assert (k * (k - 1) * pmf).sum() == pytest.approx(law.second_factorial, rel=1e-10)
    s = 0.37
    assert (pmf * s**k).sum() == pytest.approx(float(law.pgf(s)), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from([GEOMETRIC, POISSON, FRACTIONAL_ATOM]),
    x=st.floats(-6, 6),
    gamma=st.floats(0, 0.9),
    u=st.floats(1e-9, 1.0),
)
def test_g_term_within_bounds(kind, x, gamma, u):
    gamma = gamma if kind == FRACTIONAL_ATOM else 0.0
    g = float(g_term(kind, x, gamma, u))
    eta = float(eta_values(kind, x, gamma))
    assert -1e-12 <= g <= 2 * eta * (1 + 1e-12)
    # definition: 1/(1 - f(1-u)) - 1/(f'(1) u)
    one_minus = float(one_minus_pgf(kind, x, gamma, u))
    mean = math.exp(x)
    direct = 1.0 / one_minus - 1.0 / (mean * u)
    assert g == pytest.approx(direct, rel=1e-6, abs=1e-9 * (1.0 / one_minus))


def test_fractional_atom_g_is_constant():
    u = np.array([1e-6, 0.3, 1.0])
    assert np.allclose(g_term(FRACTIONAL_ATOM, 0.7, 0.25, u), 1.0 / (1 - 0.25))


def test_model_validation():
    with pytest.raises(ConfigError):
        EnvironmentModel(beta=2.0)
    with pytest.raises(ConfigError):
        EnvironmentModel(shift_c=1.0)  # E[X] = 0.5 > 0
    with pytest.raises(ConfigError):
        EnvironmentModel(family="lognormal")
    assert EnvironmentModel.from_config(EnvironmentModel(PARETO_POISSON).to_config()) == EnvironmentModel(PARETO_POISSON)


def test_sample_environment_fast_path_matches_columnwise():
    m = EnvironmentModel()
    x1, _ = sample_environment(m, 7, 50, stream(9))
    rng = stream(9)
    cols = [m.sample_x(rng, 50)[0] for _ in range(7)]
    assert np.array_equal(x1, np.column_stack(cols))


def test_jump_at_conditioning():
    m = EnvironmentModel()
    thr = 20.0
    x, _ = sample_environment(m, 10, 500, stream(10), jump_at=4, threshold=thr)
    assert (x[:, :3] <= thr).all() and (x[:, 3] > thr).all()


def test_mixture_weights_are_unbiased():
    m = EnvironmentModel()
    comps = ((0.2, 0, None, 0), (0.5, 5.0, None, 1), (0.3, 3.0, None, 2))
    x, _, w = sample_environment_mixture(m, 10, 400_000, stream(11), comps, threshold=100.0)
    # E[w] = 1 and E[w 1{max X > 5}] = 1 - (1 - A(5))^10
    assert np.mean(w) == pytest.approx(1.0, abs=0.01)
    target = 1.0 - (1.0 - m.tail(5.0)) ** 10
    est = np.mean(w * (x.max(axis=1) > 5.0))
    assert est == pytest.approx(target, rel=0.02)


def test_fixed_environment():
    law = OffspringLaw.geometric(0.4)
    fe = FixedEnvironment(law)
    assert fe.a == pytest.approx(-math.log(0.4 / 0.6))
    x, _ = fe.sample_x(stream(1), 3)
    assert np.allclose(x, law.log_mean)
