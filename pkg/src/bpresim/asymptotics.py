"""Limit constants and limiting laws, evaluated as truncated series.

Every constant is a series whose terms are expectations over the random
walk or the environment; terms are estimated on one shared pool of samples
(common random numbers) and reported together with an explicit truncation
bound for the neglected tail.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .env_models import one_minus_pgf, sample_environment
from .errors import ConfigError
from .montecarlo import Estimate, _moments, _pool_all, local_window_probability, negative_part_expectation
from .process_core import _next_generation, survival_curve_batch
from .streams import as_generator, run_tasks, shard_sizes

POOL_SHARD = 50_000


@dataclass
class ConstantReport:
    """A truncated-series constant with its two error sources kept apart."""

    name: str
    value: float
    truncation_index: int
    truncation_bound: float
    mc_stderr: float
    seed: Optional[int] = None
    terms: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.truncation_bound >= 0:
            raise ConfigError("truncation bound must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "truncation_index": self.truncation_index,
            "truncation_bound": self.truncation_bound,
            "mc_stderr": self.mc_stderr,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _seed_of(rng) -> Optional[int]:
    return int(rng) if isinstance(rng, (int, np.integer)) else None


def _tail_sum(fn: Callable[[np.ndarray], np.ndarray], start: int, beta: float, span: int = 100) -> float:
    """``sum_{k >= start} fn(k)`` for a term decaying like ``k^{-beta}`` (or
    faster); the sum is explicit up to ``span * start`` and closed with the
    integral of a power law beyond."""
    stop = max(span * start, start + 1000)
    k = np.arange(start, stop, dtype=float)
    vals = fn(k)
    head = float(vals.sum())
    last = float(vals[-1])
    if not np.isfinite(beta):
        return head
    return head + last * stop / max(beta - 1.0, 1e-9)


# ---------------------------------------------------------------------------
# shared walk pools


def _walk_pool_task(rng, size, model, length, stat):
    x, _ = sample_environment(model, length, size, rng)
    return stat(np.cumsum(x, axis=1))


def _walk_pool(model, length, samples, rng, stat, workers=1):
    tasks = [(s, model, length, stat) for s in shard_sizes(samples, POOL_SHARD)]
    return run_tasks(_walk_pool_task, tasks, rng, workers)


def _stat_nonneg(s):
    k = np.arange(1, s.shape[1] + 1)
    ind = s >= 0.0
    y = (ind / k).sum(axis=1)
    return ind.sum(axis=0), _moments(y)


def _stat_neg_exp(s):
    k = np.arange(1, s.shape[1] + 1)
    v = np.where(s < 0.0, np.exp(np.minimum(s, 0.0)), 0.0)
    y = (v / k).sum(axis=1)
    return v.sum(axis=0), _moments(y)


def _stat_min_exp(s):
    run_min = np.minimum.accumulate(np.minimum(s, 0.0), axis=1)
    return np.exp(run_min).sum(axis=0)


def _stat_baxter(s):
    v = np.where(s < 0.0, np.exp(np.minimum(s, 0.0)), 0.0)
    run_max = np.maximum.accumulate(s, axis=1)
    d = np.where(run_max < 0.0, np.exp(np.minimum(s, 0.0)), 0.0)
    return v.sum(axis=0), v.T @ v, d.sum(axis=0), (d * d).sum(axis=0)


# ---------------------------------------------------------------------------
# constants


def const_D(model, k_max: int = 200, samples_per_term: int = 1_000_000, rng=None, workers: int = 1) -> ConstantReport:
    """``D = sum_k P(S_k >= 0) / k`` truncated at ``k_max``.

    The neglected tail uses ``P(S_k >= 0) <= rho k A(ak)``, with ``rho`` the
    largest observed ratio over the last fifth of the terms (at least 1),
    doubled for safety.
    """
    if k_max < 1:
        raise ConfigError("k_max must be at least 1")
    seed = _seed_of(rng)
    rng = as_generator(rng)
    out = _walk_pool(model, k_max, samples_per_term, rng, _stat_nonneg, workers)
    counts = sum(o[0] for o in out)
    terms = counts / samples_per_term
    y = Estimate.from_moments(_pool_all(o[1] for o in out))
    value = float((terms / np.arange(1, k_max + 1)).sum())
    k = np.arange(max(1, int(0.8 * k_max)), k_max + 1)
    ref = k * np.asarray(model.tail(model.a * k), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(ref > 0, terms[k - 1] / ref, 0.0)
    rho = max(1.0, float(np.max(ratios)))
    tail = _tail_sum(lambda kk: np.asarray(model.tail(model.a * kk), dtype=float), k_max + 1, model.beta)
    return ConstantReport("D", value, k_max, 2.0 * rho * tail, y.stderr, seed, terms)


def _tau_task(rng, size, model, horizon):
    """Counts of ``{tau > j}`` for j = 0..horizon over lazily simulated walks."""
    counts = np.zeros(horizon + 1, dtype=np.int64)
    s = np.zeros(size)
    alive = np.arange(size)
    counts[0] = size
    for j in range(1, horizon + 1):
        xs, _ = model.sample_x(rng, alive.size)
        s[alive] += xs
        alive = alive[s[alive] >= 0.0]
        counts[j] = alive.size
        if alive.size == 0:
            break
    return counts


def const_E_tau(model, samples: int = 1_000_000, horizon: int = 2000, rng=None, workers: int = 1) -> ConstantReport:
    """``E[tau] = sum_{j >= 0} P(tau > j)`` with ``terms[j] = P(tau > j)``.

    The tail beyond the horizon extrapolates ``P(tau > j) ~ j^{-beta}`` from
    the last nonzero term.
    """
    seed = _seed_of(rng)
    rng = as_generator(rng)
    tasks = [(s, model, horizon) for s in shard_sizes(samples, POOL_SHARD)]
    counts = sum(run_tasks(_tau_task, tasks, rng, workers))
    terms = counts / samples
    value = float(terms[:horizon].sum())
    # Var(min(tau, H)) from E[min(tau, H)^2] = sum_j (2j+1) P(tau > j)
    j = np.arange(horizon)
    second = float(((2 * j + 1) * terms[:horizon]).sum())
    stderr = math.sqrt(max(second - value * value, 0.0) / samples)
    tail = 0.0
    if np.isfinite(model.beta):
        last = int(np.flatnonzero(terms > 0)[-1])
        anchor = max(last, 1)
        tail = float(terms[last]) * (anchor / horizon) ** model.beta * horizon / (model.beta - 1.0)
    return ConstantReport("E_tau", value, horizon, tail, stderr, seed, terms)


def const_K1(model, n_max: int = 200, samples_per_term: int = 1_000_000, rng=None, workers: int = 1) -> ConstantReport:
    """``K_1 = (beta/a) exp(sum_n E[e^{S_n}; S_n < 0] / n)``."""
    if n_max < 1:
        raise ConfigError("n_max must be at least 1")
    seed = _seed_of(rng)
    rng = as_generator(rng)
    out = _walk_pool(model, n_max, samples_per_term, rng, _stat_neg_exp, workers)
    terms = sum(o[0] for o in out) / samples_per_term
    y = Estimate.from_moments(_pool_all(o[1] for o in out))
    pref = model.beta / model.a
    value = pref * math.exp(float((terms / np.arange(1, n_max + 1)).sum()))
    tail = _tail_sum(lambda kk: pref * np.asarray(model.tail(model.a * kk), dtype=float) / kk, n_max + 1, model.beta + 1)
    return ConstantReport("K1", value, n_max, value * math.expm1(2.0 * tail), value * y.stderr, seed, terms)


def _k_task(rng, size, model, j_max):
    x, g = sample_environment(model, j_max, size, rng)
    gam = model.gamma_law.sample(rng, size)
    curve = survival_curve_batch(model.kind, x, g, 1.0 - gam)
    return curve.sum(axis=0), _moments(curve.sum(axis=1))


def const_K(
    model,
    j_max: int = 60,
    env_samples: int = 200_000,
    rng=None,
    workers: int = 1,
    tail_factor: int = 4,
    tail_samples: Optional[int] = None,
) -> ConstantReport:
    """``K = sum_j E[1 - f_{0,j}(gamma)]`` with ``gamma`` drawn independently
    of the environment; ``terms[j]`` is the j-th summand.

    The tail beyond ``j_max`` is bounded by ``sum_j E[e^{L_j}]``, estimated
    on fresh walks up to ``tail_factor * j_max`` and closed analytically.
    """
    if j_max < 0:
        raise ConfigError("j_max must be nonnegative")
    seed = _seed_of(rng)
    rng = as_generator(rng)
    if j_max == 0:
        mean_one_minus = 1.0 - model.gamma_law.mean
        return ConstantReport("K", mean_one_minus, 0, _k_tail(model, 0, env_samples, rng, workers, tail_factor), 0.0, seed, np.array([mean_one_minus]))
    tasks = [(s, model, j_max) for s in shard_sizes(env_samples, POOL_SHARD)]
    out = run_tasks(_k_task, tasks, rng, workers)
    terms = sum(o[0] for o in out) / env_samples
    y = Estimate.from_moments(_pool_all(o[1] for o in out))
    bound = _k_tail(model, j_max, tail_samples or env_samples, rng.spawn(1)[0], workers, tail_factor)
    return ConstantReport("K", float(terms.sum()), j_max, bound, y.stderr, seed, terms)


def _k_tail(model, j_max, samples, rng, workers, tail_factor):
    length = max(tail_factor * max(j_max, 1), j_max + 10)
    sums = sum(_walk_pool(model, length, samples, rng, _stat_min_exp, workers))
    m = sums / samples  # m[j-1] = E[exp(L_j)]
    explicit = float(m[j_max:].sum())
    last = float(m[-1])
    if not np.isfinite(model.beta):
        # deterministic environments decay geometrically
        r = math.exp(-model.a)
        return explicit + last * r / (1.0 - r)
    return explicit + last * length / max(model.beta - 1.0, 1e-9)


# ---------------------------------------------------------------------------
# limiting laws and predictions


def theoretical_survival(model, K_report: ConstantReport, n: int) -> float:
    """``K A(na)``."""
    return K_report.value * float(model.tail(n * model.a))


def tau_tail_law(model, D_report: ConstantReport, n: int) -> float:
    """``e^D A(an)``, the predicted ``P(tau > n)``."""
    return math.exp(D_report.value) * float(model.tail(model.a * n))


def durrett_law(model, n_ref: int, j: int, E_tau_report: ConstantReport) -> float:
    """Limit of ``P(U_n = j | tau > n)``: ``P(tau > j-1) / E[tau]``."""
    if j < 1:
        raise ConfigError("j must be at least 1")
    terms = E_tau_report.terms
    if terms is None or j - 1 >= terms.size:
        raise ConfigError("E_tau report does not cover this j")
    return float(terms[j - 1]) / E_tau_report.value


def durrett_masses(E_tau_report: ConstantReport, j_hi: int) -> np.ndarray:
    return np.array([E_tau_report.terms[j - 1] for j in range(1, j_hi + 1)]) / E_tau_report.value


def un_yaglom_law(model, K_report: ConstantReport, j: int, env_samples: Optional[int] = None, rng=None) -> float:
    """Limit of ``P(U_n = j | Z_n > 0)``: ``E[1 - f_{0,j-1}(gamma)] / K``.

    Uses the terms stored in ``K_report`` when they reach ``j - 1``,
    otherwise estimates the term afresh.
    """
    if j < 1:
        raise ConfigError("j must be at least 1")
    terms = K_report.terms
    if terms is not None and j - 1 < terms.size:
        return float(terms[j - 1]) / K_report.value
    fresh = const_K(model, j - 1, env_samples or 100_000, rng)
    return float(fresh.terms[j - 1]) / K_report.value


def yaglom_masses(K_report: ConstantReport, j_hi: int) -> tuple[np.ndarray, float]:
    """Masses for j = 1..j_hi and the mass left beyond ``j_hi`` (including
    the truncation bound of ``K``)."""
    masses = np.asarray(K_report.terms[:j_hi], dtype=float) / K_report.value
    rest = max(0.0, 1.0 - masses.sum()) + K_report.truncation_bound / K_report.value
    return masses, rest


@dataclass(frozen=True)
class LocalLimitPrediction:
    value: float
    uniform_regime: bool
    threshold: float

    @property
    def warning(self) -> bool:
        return not self.uniform_regime


def local_limit_prediction(model, n: int, x: float, h: float = 1.0, N: float = 2.0) -> LocalLimitPrediction:
    """``h beta n B(x) / x`` with ``B(x) = A(x - a)`` for the centred walk.

    The prediction is flagged outside ``x >= N sqrt(n log(n+1))``.
    """
    if h <= 0:
        raise ConfigError("h must be positive")
    if x <= 0:
        raise ConfigError("x must be positive")
    thr = N * math.sqrt(n * math.log(n + 1))
    value = h * model.beta * n * float(model.tail(x - model.a)) / x
    return LocalLimitPrediction(value, x >= thr, thr)


def local_limit_mc(model, n: int, x: float, h: float = 1.0, samples: int = 400_000, rng=None, workers: int = 1) -> Estimate:
    """``P(S_n + na in [x, x + h))`` by importance sampling."""
    return local_window_probability(model, n, x, h, samples, rng, workers)


def negative_part_ratio(model, n: int, samples: int = 400_000, rng=None, workers: int = 1) -> Estimate:
    """``a E[e^{S_n}; S_n < 0] / (beta A(an))``, which tends to 1."""
    est = negative_part_expectation(model, n, samples, rng, workers=workers)
    return est.scale(model.a / (model.beta * float(model.tail(model.a * n))))


@dataclass(frozen=True)
class BaxterRow:
    n: int
    series: float
    series_se: float
    direct: float
    direct_se: float

    @property
    def z(self) -> float:
        se = math.hypot(self.series_se, self.direct_se)
        return (self.series - self.direct) / se if se > 0 else 0.0

    @property
    def relative_deviation(self) -> float:
        return (self.series - self.direct) / self.direct if self.direct else float("inf")


def baxter_check(model, n_max: int = 6, samples: int = 1_000_000, rng=None, workers: int = 1) -> list[BaxterRow]:
    """Compare the power series of ``exp(sum_n t^n E[e^{S_n}; S_n < 0] / n)``
    with ``E[e^{S_n}; M_n < 0]`` coefficient by coefficient.

    The two sides use independent walk pools; the series standard error is
    the delta method with ``d b_n / d c_k = b_{n-k} / k``.
    """
    if not 1 <= n_max <= 8:
        raise ConfigError("n_max must lie in 1..8")
    rng = as_generator(rng)
    r1, r2 = rng.spawn(2)
    left = _walk_pool(model, n_max, samples, r1, _stat_baxter, workers)
    right = _walk_pool(model, n_max, samples, r2, _stat_baxter, workers)
    c = sum(o[0] for o in left) / samples
    cov_c = (sum(o[1] for o in left) / samples - np.outer(c, c)) / samples
    d = sum(o[2] for o in right) / samples
    d_se = np.sqrt(np.maximum(sum(o[3] for o in right) / samples - d * d, 0.0) / samples)

    b = np.zeros(n_max + 1)
    b[0] = 1.0
    for m in range(1, n_max + 1):
        b[m] = sum(c[k - 1] * b[m - k] for k in range(1, m + 1)) / m
    # grad[m][k-1] = d b_m / d c_k, propagated through the recursion
    grad = np.zeros((n_max + 1, n_max))
    for m in range(1, n_max + 1):
        g = np.zeros(n_max)
        for k in range(1, m + 1):
            g += c[k - 1] * grad[m - k]
            g[k - 1] += b[m - k]
        grad[m] = g / m
    rows = []
    for m in range(1, n_max + 1):
        se = math.sqrt(max(float(grad[m] @ cov_c @ grad[m]), 0.0))
        rows.append(BaxterRow(m, float(b[m]), se, float(d[m - 1]), float(d_se[m - 1])))
    return rows


@dataclass(frozen=True)
class GammaMeanReport:
    x: float
    indicator: Estimate
    pgf: Estimate
    target: float

    @property
    def z(self) -> float:
        se = math.hypot(self.indicator.stderr, self.pgf.stderr)
        return (self.indicator.point - self.pgf.point) / se if se > 0 else 0.0


def default_delta(x: float) -> float:
    return -1.0 / math.sqrt(x)


def empirical_gamma_mean(model, x: float, samples: int = 200_000, delta_fn=default_delta, rng=None) -> GammaMeanReport:
    """Two estimators of ``E[gamma]`` from one generation after a jump
    ``X > x``: ``P(Z_1 <= e^{x(1+delta(x))})`` and ``E[f(1 - e^{-x(1+delta(x))})]``."""
    rng = as_generator(rng)
    if samples < 10 or not float(model.tail(x)) > 0.0:
        raise ConfigError("need at least 10 samples and a jump level inside the support")
    xs, gs = model.sample_x(rng, samples, mode="above", threshold=x)
    level = x * (1.0 + delta_fn(x))
    z1, logz1, _ = _next_generation(model.kind, xs, gs, np.ones(samples), np.zeros(samples), rng)
    ind = Estimate.from_binomial(int((logz1 <= level).sum()), samples, "conditional")
    pgf_vals = 1.0 - one_minus_pgf(model.kind, xs, gs, math.exp(-level))
    pgf = Estimate.from_samples(pgf_vals, "conditional")
    return GammaMeanReport(x, ind, pgf, model.gamma_law.mean)
