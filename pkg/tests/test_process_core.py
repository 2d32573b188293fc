import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpresim.env_models import GEOMETRIC, POISSON, EnvironmentModel, OffspringLaw
from bpresim.errors import ConfigError
from bpresim.process_core import (
    CAP,
    EnvRealization,
    compose_complement,
    compose_pgf,
    exact_survival_prob,
    exact_survival_prob_batch,
    second_moment,
    simulate_path,
    simulate_population,
    survival_curve_batch,
    survival_prob_batch,
    walk_functionals,
)
from bpresim.streams import stream
from bpresim.validate import truncated_distribution

LAWS = [OffspringLaw.geometric(0.3), OffspringLaw.poisson(1.4), OffspringLaw.geometric(0.55)]


def _iterate(laws, s):
    for law in reversed(laws):
        s = float(law.pgf(s))
    return s


def test_compose_matches_plain_iteration_geometric():
    laws = [OffspringLaw.geometric(p) for p in (0.3, 0.6, 0.45, 0.2)]
    env = EnvRealization.from_laws(laws)
    for s in (0.0, 0.3, 0.9):
        assert compose_pgf(env, 0, 4, s) == pytest.approx(_iterate(laws, s), abs=1e-15)
        assert compose_pgf(env, 1, 3, s) == pytest.approx(_iterate(laws[1:3], s), abs=1e-15)
    assert compose_pgf(env, 2, 2, 0.4) == 0.4


def test_compose_poisson():
    laws = [OffspringLaw.poisson(v) for v in (0.8, 1.9, 0.4)]
    env = EnvRealization.from_laws(laws)
    assert compose_pgf(env, 0, 3, 0.0) == pytest.approx(_iterate(laws, 0.0), abs=1e-15)


def test_complement_keeps_tiny_values():
    env = EnvRealization(GEOMETRIC, np.full(30, -3.0), np.zeros(30))
    v = compose_complement(env, 0, 30, 1.0)
    assert 0 < v < 1e-30


def test_compose_rejects_bad_ranges():
    env = EnvRealization.from_laws(LAWS[:1])
    with pytest.raises(ConfigError):
        compose_pgf(env, 0, 2, 0.0)
    with pytest.raises(ConfigError):
        compose_pgf(env, 0, 1, 1.5)


def test_survival_formula_single_environment():
    env = EnvRealization.from_laws([OffspringLaw.geometric(0.4), OffspringLaw.geometric(0.7)])
    direct, formula = exact_survival_prob(env)
    assert direct == pytest.approx(1 - _iterate(env.laws, 0.0), abs=1e-15)
    assert formula == pytest.approx(direct, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    xs=st.lists(st.floats(-4, 4), min_size=1, max_size=25),
    kind=st.sampled_from([GEOMETRIC, POISSON]),
)
def test_survival_formula_property(xs, kind):
    x = np.array([xs])
    direct, formula = exact_survival_prob_batch(kind, x, 0.0)
    assert 0 <= direct[0] <= 1
    assert formula[0] == pytest.approx(direct[0], rel=1e-10)


def test_survival_curve_is_nonincreasing_and_consistent():
    x = np.array([[0.5, -1.0, 2.0, -0.3, -0.7]])
    curve = survival_curve_batch(GEOMETRIC, x, 0.0)
    assert np.all(np.diff(curve[0]) <= 1e-15)
    assert curve[0, -1] == pytest.approx(survival_prob_batch(GEOMETRIC, x, 0.0)[0], rel=1e-13)
    curve_p = survival_curve_batch(POISSON, x, 0.0)
    assert curve_p[0, 3] == pytest.approx(survival_prob_batch(POISSON, x[:, :3], 0.0)[0], rel=1e-13)


def test_second_moment_against_convolution():
    laws = [OffspringLaw.poisson(0.9), OffspringLaw.poisson(1.3), OffspringLaw.poisson(0.6)]
    dist = truncated_distribution(laws, 500)
    k = np.arange(dist.size)
    env = EnvRealization.from_laws(laws)
    assert (dist * k * k).sum() == pytest.approx(second_moment(env), rel=1e-10)
    # the same oracle reproduces the survival probability
    assert 1 - dist[0] == pytest.approx(exact_survival_prob(env)[0], rel=1e-10)


def test_mean_population_matches_walk():
    model = EnvironmentModel()
    x = np.array([[0.4, -0.2, 0.3, -0.5]])
    g = np.zeros_like(x)
    b = simulate_population(model, 4, 400_000, stream(2), environment=(x, g), keep="none", record_big=False)
    mean = b.z_final.mean()
    se = b.z_final.std() / math.sqrt(b.size)
    assert abs(mean - math.exp(x.sum())) < 5 * se


def test_survival_frequency_matches_quenched_probability():
    model = EnvironmentModel()
    x = np.array([[1.0, -2.0, 0.5, -1.5, 0.2]])
    b = simulate_population(model, 5, 200_000, stream(3), environment=(x, np.zeros_like(x)), keep="none")
    p = survival_prob_batch(GEOMETRIC, x, 0.0)[0]
    se = math.sqrt(p * (1 - p) / b.size)
    assert abs(b.survived.mean() - p) < 5 * se


def test_environment_shape_is_checked():
    with pytest.raises(ConfigError):
        simulate_population(EnvironmentModel(), 4, 10, stream(1), environment=(np.zeros(3), np.zeros(3)))


def test_large_populations_are_capped_and_logged():
    model = EnvironmentModel()
    x = np.full((1, 4), 15.0)
    b = simulate_population(model, 4, 50, stream(4), environment=(x, np.zeros_like(x)), keep="all")
    assert b.capped.all()
    # Z_n e^{-S_n} has mean one: its logarithm is O(1) around 0
    assert abs(np.median(b.log_z[:, -1]) - 60.0) < 1.5
    assert (b.z[:, :2] < CAP).all()


def test_big_jump_records_largest_family():
    model = EnvironmentModel()
    x = np.array([[0.0, 30.0, -1.0]])
    b = simulate_population(model, 3, 200, stream(5), environment=(x, np.zeros_like(x)), threshold=1.5, keep="all")
    alive_at_jump = b.log_z[:, 1] > -np.inf
    assert (b.u_n[alive_at_jump] == 2).all()
    assert np.all(np.isfinite(b.log_n_big[alive_at_jump]))
    # one family of a geometric law with mean e^30 is of order e^30
    assert np.median(b.log_n_big[alive_at_jump]) > 27


def test_walk_functionals_example():
    s = np.array([0.0, -1.0, 0.5, -2.0, -2.0, 1.0])
    wf = walk_functionals(s, a=0.5)
    assert wf.M_n == 1.0 and wf.L_n == -2.0
    assert wf.tau_n == 3
    assert wf.tau == 1
    # increments -1, 1.5, -2.5, 0, 3: only the last exceeds n a = 2.5
    assert wf.U_n == 5
    assert walk_functionals(s[:4], a=0.5).U_n is None
    wf2 = walk_functionals(np.array([0.0, 3.0, 1.0]), a=1.0)
    assert wf2.U_n == 1 and wf2.tau is None


def test_simulate_path_is_reproducible():
    model = EnvironmentModel()
    p1 = simulate_path(model, 20, stream(7))
    p2 = simulate_path(model, 20, stream(7))
    assert np.array_equal(p1.z, p2.z) and np.array_equal(p1.s, p2.s)
    assert p1.z[0] == 1
