"""Offspring laws and i.i.d. environment families with exact tails.

An environment generation is described by its log-mean ``x = log f'(1)`` and,
for the fractional-atom family, the atom ``gamma`` at zero.  All three
families share the jump variable ``T ~ Pareto(beta, x_m)``:

* ``pareto_geometric``: geometric law with ``log(p/q) = T - c``;
* ``pareto_poisson``: Poisson law with ``log(lambda) = T - c``;
* ``pareto_fractional_atom``: ``f(s) = gamma + (1-gamma) q / (1 - p s)`` with
  ``log(p/q) = T - c`` and ``gamma`` drawn independently from ``gamma_law``,
  so that ``x = log(1-gamma) + T - c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate
from scipy.special import expit

from .errors import ConfigError, NumericalError

GEOMETRIC = "geometric"
POISSON = "poisson"
FRACTIONAL_ATOM = "fractional_atom"
DETERMINISTIC = "deterministic"

PARETO_GEOMETRIC = "pareto_geometric"
PARETO_POISSON = "pareto_poisson"
PARETO_FRACTIONAL_ATOM = "pareto_fractional_atom"

FAMILY_KIND = {
    PARETO_GEOMETRIC: GEOMETRIC,
    PARETO_POISSON: POISSON,
    PARETO_FRACTIONAL_ATOM: FRACTIONAL_ATOM,
}

_FAMILY_ALIASES = {
    "paretogeometric": PARETO_GEOMETRIC,
    "pareto_geometric": PARETO_GEOMETRIC,
    "geometric": PARETO_GEOMETRIC,
    "paretopoisson": PARETO_POISSON,
    "pareto_poisson": PARETO_POISSON,
    "poisson": PARETO_POISSON,
    "paretofractionalatom": PARETO_FRACTIONAL_ATOM,
    "pareto_fractional_atom": PARETO_FRACTIONAL_ATOM,
    "fractional_atom": PARETO_FRACTIONAL_ATOM,
    "fractionalatom": PARETO_FRACTIONAL_ATOM,
}

# below this value of lambda*u the Poisson correction term uses its series
_POISSON_SERIES_CUTOFF = 1e-3


# ---------------------------------------------------------------------------
# vectorised pgf kernels, parameterised by (kind, log-mean x, atom gamma)


def log_odds(kind: str, x, gamma):
    """``log(p/q)`` of the linear-fractional part of a law."""
    if kind == FRACTIONAL_ATOM:
        return np.asarray(x) - np.log1p(-np.asarray(gamma))
    return np.asarray(x)


def one_minus_pgf(kind: str, x, gamma, u):
    """``1 - f(1 - u)`` evaluated without cancellation.

    ``u`` is the complement of the pgf argument, so ``u = 1`` is ``s = 0``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        logu = np.log(u)
        if kind == GEOMETRIC:
            return expit(x + logu)
        if kind == FRACTIONAL_ATOM:
            g = np.asarray(gamma, dtype=float)
            return (1.0 - g) * expit(x - np.log1p(-g) + logu)
        if kind == POISSON:
            return -np.expm1(-np.exp(x + logu))
        if kind == DETERMINISTIC:
            return u * np.ones_like(x)
    raise ConfigError(f"unknown offspring kind {kind!r}")


def _poisson_g(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = t < _POISSON_SERIES_CUTOFF
    ts = t[small]
    out[small] = 0.5 + ts / 12.0 - ts**3 / 720.0 + ts**5 / 30240.0
    tl = t[~small]
    with np.errstate(over="ignore"):
        out[~small] = 1.0 / (-np.expm1(-tl)) - 1.0 / tl
    return out


def g_term(kind: str, x, gamma, u):
    """``1/(1 - f(s)) - 1/(f'(1)(1 - s))`` at ``s = 1 - u``.

    Linear-fractional laws have the constant value ``1/(1-gamma)``; for the
    Poisson law the small-argument branch uses the Taylor series, since both
    terms diverge while their difference stays bounded.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    shape = np.broadcast(x, u).shape
    if kind == GEOMETRIC:
        return np.ones(shape)
    if kind == FRACTIONAL_ATOM:
        return np.broadcast_to(1.0 / (1.0 - np.asarray(gamma, dtype=float)), shape).copy()
    if kind == POISSON:
        with np.errstate(over="ignore"):
            t = np.exp(x) * u
        return _poisson_g(np.broadcast_to(t, shape))
    if kind == DETERMINISTIC:
        return np.zeros(shape)
    raise ConfigError(f"unknown offspring kind {kind!r}")


def eta_values(kind: str, x, gamma):
    """``f''(1) / (2 f'(1)^2)`` for each law."""
    x = np.asarray(x, dtype=float)
    if kind == GEOMETRIC:
        return np.ones_like(x)
    if kind == FRACTIONAL_ATOM:
        return np.broadcast_to(1.0 / (1.0 - np.asarray(gamma, dtype=float)), x.shape).copy()
    if kind == POISSON:
        return np.full_like(x, 0.5)
    if kind == DETERMINISTIC:
        return np.zeros_like(x)
    raise ConfigError(f"unknown offspring kind {kind!r}")


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OffspringLaw:
    """One generation's reproduction law.

    Linear-fractional kinds are stored through ``log_odds = log(p/q)`` so that
    laws with astronomically large means stay representable.
    """

    kind: str
    log_odds: float = 0.0
    lam: float = 1.0
    gamma: float = 0.0

    @classmethod
    def geometric(cls, p: float) -> "OffspringLaw":
        if not 0.0 < p < 1.0:
            raise ConfigError("geometric law needs 0 < p < 1")
        return cls(GEOMETRIC, log_odds=math.log(p) - math.log1p(-p))

    @classmethod
    def poisson(cls, lam: float) -> "OffspringLaw":
        if lam <= 0:
            raise ConfigError("Poisson law needs lambda > 0")
        return cls(POISSON, lam=float(lam))

    @classmethod
    def fractional_atom(cls, gamma: float, p: float) -> "OffspringLaw":
        if not 0.0 <= gamma < 1.0 or not 0.0 < p < 1.0:
            raise ConfigError("fractional atom law needs 0 <= gamma < 1, 0 < p < 1")
        return cls(FRACTIONAL_ATOM, log_odds=math.log(p) - math.log1p(-p), gamma=float(gamma))

    @classmethod
    def deterministic(cls) -> "OffspringLaw":
        """Exactly one offspring per individual (a test fixture)."""
        return cls(DETERMINISTIC)

    @classmethod
    def from_log_mean(cls, kind: str, x: float, gamma: float = 0.0) -> "OffspringLaw":
        x = float(x)
        if kind == GEOMETRIC:
            return cls(GEOMETRIC, log_odds=x)
        if kind == POISSON:
            return cls(POISSON, lam=math.exp(x))
        if kind == FRACTIONAL_ATOM:
            return cls(FRACTIONAL_ATOM, log_odds=x - math.log1p(-gamma), gamma=float(gamma))
        if kind == DETERMINISTIC:
            return cls(DETERMINISTIC)
        raise ConfigError(f"unknown offspring kind {kind!r}")

    @property
    def p(self) -> float:
        return float(expit(self.log_odds))

    @property
    def q(self) -> float:
        return float(expit(-self.log_odds))

    @property
    def log_mean(self) -> float:
        if self.kind == GEOMETRIC:
            return self.log_odds
        if self.kind == FRACTIONAL_ATOM:
            return math.log1p(-self.gamma) + self.log_odds
        if self.kind == POISSON:
            return math.log(self.lam)
        return 0.0

    @property
    def mean(self) -> float:
        """f'(1)."""
        if self.kind in (GEOMETRIC, FRACTIONAL_ATOM):
            return (1.0 - self.gamma) * self.p / self.q
        if self.kind == POISSON:
            return self.lam
        return 1.0

    @property
    def second_factorial(self) -> float:
        """f''(1) = E[Z(Z-1)]."""
        if self.kind in (GEOMETRIC, FRACTIONAL_ATOM):
            r = self.p / self.q
            return (1.0 - self.gamma) * 2.0 * r * r
        if self.kind == POISSON:
            return self.lam**2
        return 0.0

    @property
    def variance(self) -> float:
        m = self.mean
        return self.second_factorial + m - m * m

    @property
    def x(self) -> float:
        return self.log_mean

    def eta(self) -> float:
        return float(eta_values(self.kind, self.log_mean, self.gamma))

    def pgf(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind in (GEOMETRIC, FRACTIONAL_ATOM):
            return self.gamma + (1.0 - self.gamma) * self.q / (1.0 - self.p * s)
        if self.kind == POISSON:
            return np.exp(self.lam * (s - 1.0))
        return s

    def one_minus_pgf(self, u):
        return one_minus_pgf(self.kind, self.log_mean, self.gamma, u)

    def g(self, u):
        return g_term(self.kind, self.log_mean, self.gamma, u)

    def pmf(self, kmax: int) -> np.ndarray:
        """Probabilities of 0..kmax offspring (truncated, not renormalised)."""
        k = np.arange(kmax + 1)
        if self.kind in (GEOMETRIC, FRACTIONAL_ATOM):
            out = (1.0 - self.gamma) * self.q * self.p**k
            out[0] += self.gamma
            return out
        if self.kind == POISSON:
            from scipy.stats import poisson

            return poisson.pmf(k, self.lam)
        out = np.zeros(kmax + 1)
        out[1] = 1.0
        return out

    def sample_offspring(self, z: int, rng: np.random.Generator) -> int:
        """Total offspring of ``z`` individuals, sampled exactly."""
        if z <= 0:
            return 0
        if self.kind == GEOMETRIC:
            return int(rng.negative_binomial(z, self.q))
        if self.kind == POISSON:
            return int(rng.poisson(z * self.lam))
        if self.kind == FRACTIONAL_ATOM:
            k = int(rng.binomial(z, 1.0 - self.gamma))
            return int(rng.negative_binomial(k, self.q)) if k else 0
        return int(z)


def eta(law: OffspringLaw) -> float:
    """Standardised second factorial moment of ``law``."""
    return law.eta()


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaLaw:
    """Uniform law on ``[low, high]``; a point mass when ``low == high``."""

    low: float = 0.0
    high: float = 0.0

    @property
    def degenerate(self) -> bool:
        return self.high <= self.low

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.degenerate:
            return np.full(size, float(self.low))
        return rng.uniform(self.low, self.high, size)

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.degenerate:
            return (y >= self.low).astype(float)
        return np.clip((y - self.low) / (self.high - self.low), 0.0, 1.0)

    def log1m_moments(self) -> tuple[float, float]:
        """Mean and variance of ``log(1 - gamma)``."""
        if self.degenerate:
            return math.log1p(-self.low), 0.0
        lo, hi = 1.0 - self.high, 1.0 - self.low
        width = hi - lo

        def first(w):
            return w * math.log(w) - w

        def second(w):
            lw = math.log(w)
            return w * lw * lw - 2.0 * w * lw + 2.0 * w

        m1 = (first(hi) - first(lo)) / width
        m2 = (second(hi) - second(lo)) / width
        return m1, max(m2 - m1 * m1, 0.0)


def _normalise_family(family: str) -> str:
    key = str(family).strip().lower()
    if key not in _FAMILY_ALIASES:
        raise ConfigError(f"unknown environment family {family!r}")
    return _FAMILY_ALIASES[key]


@dataclass(frozen=True)
class EnvironmentModel:
    """i.i.d. law of the offspring distributions ``pi_0, pi_1, ...``."""

    family: str = PARETO_GEOMETRIC
    beta: float = 3.0
    x_m: float = 1.0
    shift_c: float = 2.0
    gamma_min: float = 0.0
    gamma_max: float = 0.5
    _a: float = field(init=False, repr=False, compare=False)
    _sigma2: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "family", _normalise_family(self.family))
        if not self.beta > 2:
            raise ConfigError(f"beta must exceed 2, got {self.beta}")
        if not self.x_m > 0:
            raise ConfigError(f"x_m must be positive, got {self.x_m}")
        if self.family == PARETO_FRACTIONAL_ATOM:
            if not (0.0 <= self.gamma_min <= self.gamma_max < 1.0):
                raise ConfigError("gamma support must satisfy 0 <= gamma_min <= gamma_max < 1")
        b, xm = self.beta, self.x_m
        mean_t = b * xm / (b - 1.0)
        var_t = b * xm * xm / ((b - 1.0) ** 2 * (b - 2.0))
        m_l, v_l = self.gamma_law.log1m_moments()
        a = -(mean_t - self.shift_c + m_l)
        if not a > 0:
            raise ConfigError(f"model is not subcritical: E[X] = {-a:.6g} >= 0")
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_sigma2", var_t + v_l)

    # -- derived quantities

    @property
    def kind(self) -> str:
        return FAMILY_KIND[self.family]

    @property
    def a(self) -> float:
        """Drift magnitude, ``E[X] = -a``."""
        return self._a

    @property
    def sigma2(self) -> float:
        return self._sigma2

    @property
    def sigma(self) -> float:
        return math.sqrt(self._sigma2)

    @property
    def gamma_law(self) -> GammaLaw:
        if self.family == PARETO_FRACTIONAL_ATOM:
            return GammaLaw(self.gamma_min, self.gamma_max)
        return GammaLaw(0.0, 0.0)

    @property
    def x_inf(self) -> float:
        """Essential infimum of ``X``."""
        return self.x_m - self.shift_c + math.log1p(-self.gamma_law.high)

    # -- tails

    def _pareto_tail(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(t <= self.x_m, 1.0, (self.x_m / np.maximum(t, self.x_m)) ** self.beta)
        return out

    def _fa_tail_scalar(self, x: float) -> float:
        law = self.gamma_law
        base = x + self.shift_c
        if law.degenerate:
            return float(self._pareto_tail(base - math.log1p(-law.low)))
        if base - math.log1p(-law.high) <= self.x_m:
            return 1.0

        def integrand(g):
            return float(self._pareto_tail(base - math.log1p(-g)))

        points = None
        if base < self.x_m:
            g_star = 1.0 - math.exp(base - self.x_m)
            if law.low < g_star < law.high:
                points = [g_star]
        val, err = integrate.quad(
            integrand, law.low, law.high, points=points, epsabs=1e-14, epsrel=1e-12, limit=200
        )
        val /= law.high - law.low
        err /= law.high - law.low
        if not err <= 1e-10:
            raise NumericalError("tail quadrature did not converge", x=x, value=val, abserr=err)
        return float(val)

    def tail(self, x):
        """``A(x) = P(X > x)``, exact."""
        if self.family == PARETO_FRACTIONAL_ATOM:
            xs = np.asarray(x, dtype=float)
            out = np.vectorize(self._fa_tail_scalar, otypes=[float])(xs)
            return float(out) if out.ndim == 0 else out
        out = self._pareto_tail(np.asarray(x, dtype=float) + self.shift_c)
        return float(out) if np.ndim(out) == 0 else out

    # -- sampling

    def _pareto(self, rng, size, t_low=None, t_high=None):
        """T ~ Pareto(beta, x_m), optionally restricted to (t_low, inf) or [x_m, t_high]."""
        v = 1.0 - rng.random(size)  # (0, 1]
        if t_low is not None:
            t0 = np.maximum(np.asarray(t_low, dtype=float), self.x_m)
            return t0 * v ** (-1.0 / self.beta)
        if t_high is not None:
            mass = 1.0 - (self.x_m / np.asarray(t_high, dtype=float)) ** self.beta
            return self.x_m * (1.0 - (1.0 - v) * mass) ** (-1.0 / self.beta)
        return self.x_m * v ** (-1.0 / self.beta)

    def sample_x(self, rng: np.random.Generator, size, mode: str = "free", threshold=None):
        """Draw ``(x, gamma)`` arrays.

        ``mode`` is ``"free"``, ``"below"`` (``X <= threshold``),
        ``"above"`` (``X > threshold``) or ``"between"`` (``threshold`` is a
        pair ``(lo, hi)`` and ``lo < X <= hi``).
        """
        size = int(size)
        c = self.shift_c
        if self.family != PARETO_FRACTIONAL_ATOM:
            gamma = np.zeros(size)
            if mode == "free":
                return self._pareto(rng, size) - c, gamma
            if mode == "above":
                return self._pareto(rng, size, t_low=threshold + c) - c, gamma
            if mode == "below":
                if threshold + c <= self.x_m:
                    raise ConfigError("truncation threshold below the support of X")
                return self._pareto(rng, size, t_high=threshold + c) - c, gamma
            if mode == "between":
                lo, hi = threshold
                t_lo = max(lo + c, self.x_m)
                if hi + c <= t_lo:
                    raise ConfigError("empty sampling window for X")
                a_lo = (self.x_m / t_lo) ** self.beta
                a_hi = (self.x_m / (hi + c)) ** self.beta
                v = 1.0 - rng.random(size)
                return self.x_m * (a_hi + v * (a_lo - a_hi)) ** (-1.0 / self.beta) - c, gamma
            raise ConfigError(f"unknown sampling mode {mode!r}")

        law = self.gamma_law
        x = np.empty(size)
        gamma = np.empty(size)
        todo = np.arange(size)
        for _ in range(10_000):
            if todo.size == 0:
                return x, gamma
            g = law.sample(rng, todo.size)
            lg = np.log1p(-g)
            if mode in ("above", "between"):
                lo = threshold if mode == "above" else threshold[0]
                # T - c > lo is necessary because log(1 - gamma) <= 0
                t = self._pareto(rng, todo.size, t_low=lo + c)
                xs = lg + t - c
                ok = xs > lo
                if mode == "between":
                    ok &= xs <= threshold[1]
            else:
                t = self._pareto(rng, todo.size)
                xs = lg + t - c
                ok = np.ones(todo.size, bool) if mode == "free" else xs <= threshold
            x[todo[ok]] = xs[ok]
            gamma[todo[ok]] = g[ok]
            todo = todo[~ok]
        raise NumericalError("rejection sampler failed to terminate", mode=mode, threshold=threshold)

    def sample_law(self, rng: np.random.Generator) -> OffspringLaw:
        x, g = self.sample_x(rng, 1)
        return OffspringLaw.from_log_mean(self.kind, x[0], g[0])

    # -- configuration

    def to_config(self) -> dict[str, str]:
        return {
            "family": self.family,
            "beta": repr(float(self.beta)),
            "x_m": repr(float(self.x_m)),
            "shift_c": repr(float(self.shift_c)),
            "gamma_min": repr(float(self.gamma_min)),
            "gamma_max": repr(float(self.gamma_max)),
        }

    @classmethod
    def from_config(cls, section: Mapping[str, str]) -> "EnvironmentModel":
        allowed = {"family", "beta", "x_m", "shift_c", "gamma_min", "gamma_max"}
        unknown = set(section) - allowed
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        kw = {}
        for key in allowed & set(section):
            val = section[key]
            if key == "family":
                kw[key] = str(val)
            else:
                try:
                    kw[key] = float(val)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"model.{key}: not a number: {val!r}") from exc
        return cls(**kw)


@dataclass(frozen=True)
class FixedEnvironment:
    """Degenerate environment repeating one law every generation.

    Used as a Galton-Watson oracle: the walk is deterministic and ``tail`` is
    a step function.
    """

    law: OffspringLaw
    gamma_law: GammaLaw = GammaLaw(0.0, 0.0)
    family: str = "fixed"

    @property
    def kind(self) -> str:
        return self.law.kind

    @property
    def a(self) -> float:
        return -self.law.log_mean

    @property
    def sigma2(self) -> float:
        return 0.0

    @property
    def sigma(self) -> float:
        return 0.0

    @property
    def beta(self) -> float:
        return math.inf

    @property
    def x_inf(self) -> float:
        return self.law.log_mean

    def tail(self, x):
        out = (np.asarray(x, dtype=float) < self.law.log_mean).astype(float)
        return float(out) if out.ndim == 0 else out

    def sample_x(self, rng, size, mode="free", threshold=None):
        size = int(size)
        x = np.full(size, self.law.log_mean)
        if mode == "above" and not self.law.log_mean > threshold:
            raise ConfigError("fixed environment has no mass above the threshold")
        if mode == "below" and not self.law.log_mean <= threshold:
            raise ConfigError("fixed environment has no mass below the threshold")
        return x, np.full(size, self.law.gamma)

    def sample_law(self, rng) -> OffspringLaw:
        return self.law


def sample_law(model, rng: np.random.Generator) -> OffspringLaw:
    """One offspring law drawn from the environment model."""
    return model.sample_law(rng)


def exact_tail_A(model, x):
    """Exact ``P(X > x)``."""
    return model.tail(x)


def gamma_limit_law(model) -> GammaLaw:
    """Law of the limit variable: a point mass at 0 for the pure Pareto
    families, the configured atom law for the fractional-atom family."""
    return model.gamma_law


def sample_environment(
    model,
    n: int,
    size: int,
    rng: np.random.Generator,
    jump_at=None,
    truncate_until=None,
    threshold=None,
):
    """Draw ``size`` environments of ``n`` generations, column by column.

    ``jump_at[i] = j`` (1-based) forces ``X_j > threshold`` on row ``i`` and
    ``X_k <= threshold`` for ``k < j``.  ``truncate_until[i] = t`` imposes
    ``X_k <= threshold`` for ``k <= t`` only.  Rows with ``jump_at <= 0`` and
    ``truncate_until <= 0`` are unconstrained.  Columns are generated in
    order, so a longer horizon extends rather than reshuffles the draws.
    """
    if jump_at is None and truncate_until is None:
        # one draw in column-major order, identical to drawing column by column
        if model.family == PARETO_FRACTIONAL_ATOM:
            xs, gs = zip(*(model.sample_x(rng, size) for _ in range(n))) if n else ((), ())
            return np.array(xs).reshape(n, size).T.copy(), np.array(gs).reshape(n, size).T.copy()
        xs, gs = model.sample_x(rng, size * n)
        return xs.reshape(n, size).T.copy(), gs.reshape(n, size).T.copy()
    x = np.empty((size, n))
    gamma = np.empty((size, n))
    jump = None if jump_at is None else np.broadcast_to(np.asarray(jump_at, dtype=np.int64), (size,))
    trunc = None if truncate_until is None else np.broadcast_to(np.asarray(truncate_until, dtype=np.int64), (size,))
    for k in range(n):
        step = k + 1
        below = np.zeros(size, bool)
        above = np.zeros(size, bool)
        if jump is not None:
            below |= step < jump
            above |= step == jump
        if trunc is not None:
            below |= step <= trunc
        below &= ~above
        free = ~(below | above)
        for mask, mode in ((free, "free"), (below, "below"), (above, "above")):
            cnt = int(mask.sum())
            if cnt:
                xs, gs = model.sample_x(rng, cnt, mode=mode, threshold=threshold)
                x[mask, k] = xs
                gamma[mask, k] = gs
    return x, gamma



def sample_environment_mixture(
    model,
    n: int,
    size: int,
    rng: np.random.Generator,
    components,
    truncate_until: int = 0,
    threshold=None,
):
    """Defensive-mixture importance sampler for environments.

    The base law has ``X_k <= threshold`` for ``k <= truncate_until`` and
    free increments afterwards.  ``components`` is a sequence of
    ``(weight, lo, hi, count)``: with probability ``weight`` a uniformly
    chosen set of ``count`` positions is forced into the window
    ``(lo, hi]`` (``hi=None`` is unbounded; windows are clipped at the
    threshold on the truncated prefix); ``count=0`` is the base law itself.
    Returns ``(x, gamma, weight)`` where ``weight`` is the likelihood ratio
    of the base law to the mixture, so ``E[weight * F]`` is unbiased for the
    base expectation of ``F``.
    """
    comps = [(float(w), float(lo), None if hi is None else float(hi), int(k)) for w, lo, hi, k in components]
    total = sum(c[0] for c in comps)
    if total <= 0 or any(c[0] < 0 or c[3] < 0 or c[3] > min(n, 2) for c in comps):
        raise ConfigError("mixture components need nonnegative weights and 0..2 forced positions")
    if not any(c[3] == 0 and c[0] > 0 for c in comps):
        raise ConfigError("the mixture needs a positive weight on the base law")
    comps = [(w / total, lo, hi, k) for w, lo, hi, k in comps]
    trunc = int(truncate_until)
    thr = n * model.a if threshold is None else float(threshold)
    a_thr = float(model.tail(thr)) if trunc > 0 else 0.0

    windows = []
    for w, lo, hi, k in comps:
        if k == 0:
            windows.append(None)
            continue
        hi_t = thr if hi is None else min(hi, thr)
        p_free = float(model.tail(lo)) - (0.0 if hi is None else float(model.tail(hi)))
        p_trunc = (float(model.tail(lo)) - float(model.tail(hi_t))) / (1.0 - a_thr) if hi_t > lo else 0.0
        if (trunc < n and p_free <= 0) or (trunc > 0 and p_trunc <= 0):
            raise ConfigError("mixture window has zero probability")
        windows.append((lo, hi, hi_t, p_free, p_trunc))

    choice = rng.choice(len(comps), size=size, p=[c[0] for c in comps])
    forced = np.zeros((size, n), bool)
    for c, (w, lo, hi, k) in enumerate(comps):
        rows = np.flatnonzero(choice == c)
        if k == 0 or rows.size == 0:
            continue
        keys = rng.random((rows.size, n))
        pos = np.argpartition(keys, k - 1, axis=1)[:, :k]
        forced[rows[:, None], pos] = True

    x = np.empty((size, n))
    gamma = np.empty((size, n))
    for j in range(n):
        step = j + 1
        free_col = step > trunc
        plan = [(~forced[:, j], "free" if free_col else "below", None if free_col else thr)]
        for c, win in enumerate(windows):
            if win is None:
                continue
            lo, hi, hi_t, _, _ = win
            mask = forced[:, j] & (choice == c)
            if free_col:
                plan.append((mask, "above" if hi is None else "between", lo if hi is None else (lo, hi)))
            else:
                plan.append((mask, "between", (lo, hi_t)))
        for mask, mode, level in plan:
            cnt = int(mask.sum())
            if cnt:
                xs, gs = model.sample_x(rng, cnt, mode=mode, threshold=level)
                x[mask, j] = xs
                gamma[mask, j] = gs

    free_cols = np.arange(1, n + 1) > trunc
    ratio = np.zeros(size)
    for (w, lo, hi, k), win in zip(comps, windows):
        if win is None:
            ratio += w
            continue
        _, _, hi_t, p_free, p_trunc = win
        upper = np.where(free_cols, np.inf if hi is None else hi, hi_t)
        pb = np.where(free_cols, p_free, p_trunc)
        y = ((x > lo) & (x <= upper[None, :])) / pb[None, :]
        e1 = y.sum(axis=1)
        if k == 1:
            ratio += w * e1 / n
        else:
            ratio += w * (e1 * e1 - (y * y).sum(axis=1)) / (n * (n - 1))
    return x, gamma, 1.0 / ratio

