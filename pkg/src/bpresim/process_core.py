"""Branching process in a random environment: exact pgf algebra and simulation.

Conventions: generation ``k`` (0-based) reproduces with law ``pi_k`` whose
log-mean is the walk increment ``X_{k+1}``; ``S_0 = 0``.  Complements
``u = 1 - s`` are used throughout so that survival probabilities of order
``e^{-50}`` keep full relative precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp, ndtri

from .env_models import (
    DETERMINISTIC,
    FRACTIONAL_ATOM,
    GEOMETRIC,
    POISSON,
    OffspringLaw,
    eta_values,
    g_term,
    log_odds,
    one_minus_pgf,
)
from .errors import ConfigError, NumericalError

CAP = 2.0**53
"""Population size above which unit-exact integer sampling stops."""

INDIVIDUAL_LIMIT = 10_000
"""Largest parent count whose offspring are drawn one by one at the big jump."""

_LOG_CAP = math.log(CAP)
_LINEAR_FRACTIONAL = (GEOMETRIC, FRACTIONAL_ATOM)


# ---------------------------------------------------------------------------
# environments


@dataclass(frozen=True)
class EnvRealization:
    """A realised environment ``pi_0 .. pi_{n-1}`` of a single kind."""

    kind: str
    x: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        g = np.broadcast_to(np.asarray(self.gamma, dtype=float), x.shape).copy()
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "gamma", g)

    @classmethod
    def from_laws(cls, laws: Sequence[OffspringLaw]) -> "EnvRealization":
        kinds = {law.kind for law in laws}
        if len(kinds) != 1:
            raise ConfigError(f"environment mixes offspring kinds {sorted(kinds)}")
        return cls(kinds.pop(), [law.log_mean for law in laws], [law.gamma for law in laws])

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def laws(self) -> list[OffspringLaw]:
        return [OffspringLaw.from_log_mean(self.kind, x, g) for x, g in zip(self.x, self.gamma)]

    @property
    def s(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.x)))

    def eta(self) -> np.ndarray:
        """``eta_{k+1} = eta(pi_k)`` for k = 0..n-1."""
        return eta_values(self.kind, self.x, self.gamma)


def _check_range(env: EnvRealization, k: int, n: int):
    if not 0 <= k <= n <= env.n:
        raise ConfigError(f"need 0 <= k <= n <= {env.n}, got k={k}, n={n}")


def _iterate_back(kind, x, gamma, u_end):
    """Backward complements ``u_k = 1 - f_{k,n}(1 - u_end)`` for k = n..0.

    ``x``/``gamma`` have shape (..., n); returns shape (..., n+1).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), x.shape)
    out = np.empty(x.shape[:-1] + (n + 1,))
    u = np.broadcast_to(np.asarray(u_end, dtype=float), x.shape[:-1]).astype(float)
    out[..., n] = u
    for k in range(n - 1, -1, -1):
        u = one_minus_pgf(kind, x[..., k], gamma[..., k], u)
        out[..., k] = u
    return out


def _lf_closed_form(x, gamma, u, kind):
    """``1 - f_{0,n}(1 - u)`` for a linear-fractional environment in closed form.

    Linear-fractional maps compose to a linear-fractional map, which gives
    ``1 / (e^{-S_n}/u + sum_k c_k e^{-S_k})`` with ``c_k = 1/(1 - gamma_k)``;
    evaluated in log space.
    """
    x = np.asarray(x, dtype=float)
    s = np.cumsum(x, axis=-1)
    s_prev = np.concatenate((np.zeros(x.shape[:-1] + (1,)), s[..., :-1]), axis=-1)
    logc = -np.log1p(-np.asarray(gamma, dtype=float)) if kind == FRACTIONAL_ATOM else 0.0
    with np.errstate(divide="ignore"):
        terms = np.concatenate(
            ((-s[..., -1] - np.log(u))[..., None], np.broadcast_to(logc - s_prev, x.shape)), axis=-1
        )
    return np.exp(-logsumexp(terms, axis=-1))


def compose_pgf(env: EnvRealization, k: int, n: int, s: float) -> float:
    """``f_{k,n}(s) = f_k(f_{k+1}(... f_{n-1}(s)))``, with ``f_{n,n}(s) = s``."""
    _check_range(env, k, n)
    if not 0.0 <= s <= 1.0:
        raise ConfigError(f"pgf argument must lie in [0, 1], got {s}")
    return 1.0 - compose_complement(env, k, n, 1.0 - s)


def compose_complement(env: EnvRealization, k: int, n: int, u: float) -> float:
    """``1 - f_{k,n}(1 - u)``."""
    _check_range(env, k, n)
    if k == n:
        return float(u)
    if u == 0.0:
        return 0.0
    if env.kind in _LINEAR_FRACTIONAL:
        return float(_lf_closed_form(env.x[k:n], env.gamma[k:n], u, env.kind))
    return float(_iterate_back(env.kind, env.x[k:n], env.gamma[k:n], u)[0])


def survival_prob_batch(kind: str, x, gamma, u_end=1.0) -> np.ndarray:
    """Quenched ``P_pi(Z_n > 0)`` (or ``1 - f_{0,n}(1 - u_end)``) per row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] == 0:
        return np.broadcast_to(np.asarray(u_end, float), x.shape[:1]).astype(float)
    if kind in _LINEAR_FRACTIONAL:
        return _lf_closed_form(x, np.broadcast_to(gamma, x.shape), np.asarray(u_end, float), kind)
    return _iterate_back(kind, x, gamma, u_end)[:, 0]


def survival_curve_batch(kind: str, x, gamma, u_end=1.0) -> np.ndarray:
    """``1 - f_{0,j}(1 - u_end)`` for j = 0..n, shape (rows, n+1)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rows, n = x.shape
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), x.shape)
    u = np.broadcast_to(np.asarray(u_end, dtype=float), (rows,)).astype(float)
    out = np.empty((rows, n + 1))
    out[:, 0] = u
    if kind in _LINEAR_FRACTIONAL:
        s = np.cumsum(x, axis=1)
        s_prev = np.concatenate((np.zeros((rows, 1)), s[:, :-1]), axis=1)
        logc = -np.log1p(-gamma) if kind == FRACTIONAL_ATOM else np.zeros_like(x)
        acc = np.logaddexp.accumulate(logc - s_prev, axis=1)
        with np.errstate(divide="ignore"):
            first = -s - np.log(u)[:, None]
        out[:, 1:] = np.exp(-np.logaddexp(first, acc))
        return out
    for j in range(1, n + 1):
        v = u
        for k in range(j - 1, -1, -1):
            v = one_minus_pgf(kind, x[:, k], gamma[:, k], v)
        out[:, j] = v
    return out


def exact_survival_prob_batch(kind: str, x, gamma, check_bounds: bool = True):
    """Direct and formula-based quenched survival probabilities per row.

    ``direct`` iterates the pgfs; ``formula`` is
    ``(e^{-S_n} + sum_k g_k(f_{k+1,n}(0)) e^{-S_k})^{-1}``.  With
    ``check_bounds`` every ``g_k`` is asserted to lie in ``[0, 2 eta_{k+1}]``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), x.shape)
    u = _iterate_back(kind, x, gamma, 1.0)  # u[:, k] = 1 - f_{k,n}(0)
    direct = u[:, 0]
    g = g_term(kind, x, gamma, u[:, 1:])
    if check_bounds:
        eta = eta_values(kind, x, gamma)
        tol = 1e-12 * np.maximum(eta, 1.0)
        bad = (g < -tol) | (g > 2.0 * eta + tol) | ~np.isfinite(g)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise NumericalError(
                "g_k outside [0, 2 eta_{k+1}]", row=int(r), k=int(c), g=float(g[r, c]), eta=float(eta[r, c])
            )
    s = np.cumsum(x, axis=1)
    s_prev = np.concatenate((np.zeros((x.shape[0], 1)), s[:, :-1]), axis=1)
    with np.errstate(divide="ignore"):
        terms = np.concatenate((-s[:, -1:], np.log(g) - s_prev), axis=1)
    formula = np.exp(-logsumexp(terms, axis=1))
    return direct, formula


def exact_survival_prob(env: EnvRealization, n: Optional[int] = None) -> tuple[float, float]:
    """``(direct, formula)`` values of ``P_pi(Z_n > 0)`` for cross-validation."""
    n = env.n if n is None else n
    if n < 1:
        raise ConfigError("n must be at least 1")
    _check_range(env, 0, n)
    d, f = exact_survival_prob_batch(env.kind, env.x[None, :n], env.gamma[None, :n])
    return float(d[0]), float(f[0])


def log_second_moment_batch(kind: str, x, gamma) -> np.ndarray:
    """``log E_pi[Z_n^2]`` per row.

    Uses ``E_pi[Z_n^2] = 2 e^{2 S_n} sum_{k<n} eta_{k+1} e^{-S_k} + e^{S_n}``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    eta = eta_values(kind, x, np.broadcast_to(gamma, x.shape))
    s = np.cumsum(x, axis=1)
    s_prev = np.concatenate((np.zeros((x.shape[0], 1)), s[:, :-1]), axis=1)
    sn = s[:, -1]
    with np.errstate(divide="ignore"):
        fact = math.log(2.0) + 2.0 * sn + logsumexp(np.log(eta) - s_prev, axis=1)
    return np.logaddexp(fact, sn)


def second_moment(env: EnvRealization, n: Optional[int] = None, log: bool = False) -> float:
    """Quenched second moment ``E_pi[Z_n^2]`` (its logarithm with ``log=True``)."""
    n = env.n if n is None else n
    if n < 1:
        raise ConfigError("n must be at least 1")
    _check_range(env, 0, n)
    val = float(log_second_moment_batch(env.kind, env.x[None, :n], env.gamma[None, :n])[0])
    if log:
        return val
    return math.exp(val) if val < 709.0 else math.inf


# ---------------------------------------------------------------------------
# walk functionals


@dataclass(frozen=True)
class WalkFunctionals:
    M_n: float
    L_n: float
    tau_n: int
    tau: Optional[int]
    U_n: Optional[int]


def walk_functionals_batch(s, a: float, x=None):
    """Vectorised walk functionals.

    ``s`` has shape (rows, n+1) with ``S_0 = 0``.  Returns a dict of arrays;
    ``tau`` and ``U_n`` use -1 for "not reached by n".
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    n = s.shape[1] - 1
    if x is None:
        x = np.diff(s, axis=1)
    x = np.atleast_2d(x)
    rows = s.shape[0]
    m_n = s[:, 1:].max(axis=1) if n >= 1 else np.full(rows, -np.inf)
    l_n = s.min(axis=1)
    tau_n = s.argmin(axis=1)  # first index attaining the minimum
    neg = s[:, 1:] < 0.0
    tau = np.where(neg.any(axis=1), neg.argmax(axis=1) + 1, -1)
    big = x > n * a
    u_n = np.where(big.any(axis=1), big.argmax(axis=1) + 1, -1)
    return {"M_n": m_n, "L_n": l_n, "tau_n": tau_n, "tau": tau, "U_n": u_n}


def walk_functionals(path, a: float) -> WalkFunctionals:
    """Running max/min, first argmin, first strict descent and first big jump."""
    s = np.asarray(path.s if hasattr(path, "s") else path, dtype=float)
    res = walk_functionals_batch(s[None, :], a)
    tau = int(res["tau"][0])
    u_n = int(res["U_n"][0])
    return WalkFunctionals(
        M_n=float(res["M_n"][0]),
        L_n=float(res["L_n"][0]),
        tau_n=int(res["tau_n"][0]),
        tau=tau if tau > 0 else None,
        U_n=u_n if u_n > 0 else None,
    )


def diagnostic_events(path, model=None) -> dict[str, bool]:
    """Typical-environment events ``G_n`` (walk stays in a ``n^{2/3}`` band
    around ``-ka``) and ``H_n`` (accumulated eta is not too large)."""
    s = np.asarray(path.s, dtype=float)
    n = s.size - 1
    a = model.a if model is not None else -s[-1] / n
    k = np.arange(1, n + 1)
    g_n = bool(np.max(np.abs(s[1:] + k * a)) < n ** (2.0 / 3.0))
    eta = path.env.eta() if hasattr(path, "env") else np.asarray(path.eta)
    bound = 2.0 * n * math.exp(n / math.log(n)) if n > 1 else math.inf
    h_n = bool(1.0 + eta.sum() <= bound)
    return {"G_n": g_n, "H_n": h_n}


# ---------------------------------------------------------------------------
# simulation


@dataclass
class PathRecord:
    """One realised trajectory.

    ``z`` holds exact population sizes while the path is uncapped; once a
    generation exceeds ``CAP`` the path is flagged ``capped`` and ``log_z``
    is the authoritative record.
    """

    z: np.ndarray
    s: np.ndarray
    env: EnvRealization
    log_z: np.ndarray
    capped: bool = False
    n_big_jump_offspring: Optional[float] = None
    log_n_big: Optional[float] = None
    U_n: Optional[int] = None

    @property
    def n(self) -> int:
        return self.s.size - 1

    @property
    def laws(self) -> list[OffspringLaw]:
        return self.env.laws

    @property
    def survived(self) -> bool:
        return bool(self.z[-1] > 0)


@dataclass
class PathBatch:
    """Vectorised simulation output.

    Per-path arrays cover every simulated path; ``x``, ``gamma``, ``z`` and
    ``log_z`` rows are stored only for the kept paths listed in ``ids``.
    ``u_n`` is -1 when no increment exceeded the threshold and -2 when the
    path died before the environment was fully sampled.
    """

    n: int
    kind: str
    threshold: float
    survived: np.ndarray
    z_final: np.ndarray
    log_z_final: np.ndarray
    capped: np.ndarray
    u_n: np.ndarray
    log_n_big: np.ndarray
    ids: np.ndarray
    x: np.ndarray
    gamma: np.ndarray
    z: np.ndarray
    log_z: np.ndarray

    @property
    def size(self) -> int:
        return self.survived.size

    @property
    def s(self) -> np.ndarray:
        return np.concatenate((np.zeros((self.x.shape[0], 1)), np.nancumsum(self.x, axis=1)), axis=1)

    def record(self, row: int) -> PathRecord:
        pid = int(self.ids[row])
        env = EnvRealization(self.kind, self.x[row], self.gamma[row])
        lnb = self.log_n_big[pid]
        u = int(self.u_n[pid])
        return PathRecord(
            z=self.z[row].copy(),
            s=self.s[row],
            env=env,
            log_z=self.log_z[row].copy(),
            capped=bool(self.capped[pid]),
            n_big_jump_offspring=None if np.isnan(lnb) else float(np.exp(lnb)),
            log_n_big=None if np.isnan(lnb) else float(lnb),
            U_n=u if u > 0 else None,
        )


def _log_expit(v):
    return -np.logaddexp(0.0, -v)


def _gamma_log(rng, log_shape):
    """log of Gamma(shape, 1) draws, switching to a normal approximation for
    very large shapes."""
    out = np.empty_like(log_shape)
    small = log_shape < math.log(1e12)
    if small.any():
        with np.errstate(divide="ignore"):
            out[small] = np.log(rng.gamma(np.exp(log_shape[small])))
    big = ~small
    if big.any():
        ls = log_shape[big]
        out[big] = ls + np.log1p(rng.standard_normal(ls.size) * np.exp(-0.5 * ls))
    return out


def _next_generation(kind, x, gamma, z, logz, rng, cap=CAP):
    """Total offspring of ``z`` parents under the given laws.

    Returns ``(z_new, logz_new, huge)`` where ``huge`` marks draws made by the
    large-population approximation (expected offspring above ``cap``).
    """
    m = x.size
    z_new = np.zeros(m)
    logz_new = np.full(m, -np.inf)
    log_cap = math.log(cap)
    exact = (z < cap) & (logz + x < log_cap - 2.0)
    if kind == DETERMINISTIC:
        return z.copy(), logz.copy(), np.zeros(m, bool)
    e = np.flatnonzero(exact)
    if e.size:
        zi = z[e].astype(np.int64)
        xe = x[e]
        if kind == GEOMETRIC:
            draws = rng.negative_binomial(zi, expit(-xe))
        elif kind == POISSON:
            draws = rng.poisson(zi * np.exp(xe))
        elif kind == FRACTIONAL_ATOM:
            ge = gamma[e]
            k = rng.binomial(zi, 1.0 - ge)
            draws = np.zeros(e.size, np.int64)
            pos = k > 0
            draws[pos] = rng.negative_binomial(k[pos], expit(-(xe[pos] - np.log1p(-ge[pos]))))
        else:
            raise ConfigError(f"unknown offspring kind {kind!r}")
        z_new[e] = draws
        with np.errstate(divide="ignore"):
            logz_new[e] = np.log(draws.astype(float))
    h = np.flatnonzero(~exact)
    if h.size:
        xh, lz = x[h], logz[h]
        if kind == POISSON:
            lm = lz + xh
            logz_new[h] = lm + np.log1p(rng.standard_normal(h.size) * np.exp(-0.5 * lm))
        else:
            lr = xh.copy()
            logk = lz.copy()
            if kind == FRACTIONAL_ATOM:
                gh = gamma[h]
                lr = xh - np.log1p(-gh)
                small = z[h] < cap
                logk = np.empty(h.size)
                if small.any():
                    k = rng.binomial(z[h][small].astype(np.int64), 1.0 - gh[small])
                    with np.errstate(divide="ignore"):
                        logk[small] = np.log(k.astype(float))
                if (~small).any():
                    gs = gh[~small]
                    rel = np.sqrt(gs / (1.0 - gs)) * np.exp(-0.5 * lz[~small])
                    logk[~small] = lz[~small] + np.log1p(-gs) + np.log1p(rel * rng.standard_normal(gs.size))
            # sum of k geometric laws ~ Gamma(k p, scale 1/q): matches mean and variance
            live = np.isfinite(logk)
            out = np.full(h.size, -np.inf)
            if live.any():
                lshape = logk[live] + _log_expit(lr[live])
                out[live] = _gamma_log(rng, lshape) + np.logaddexp(0.0, lr[live])
            logz_new[h] = out
        zl = logz_new[h]
        with np.errstate(over="ignore"):
            z_new[h] = np.where(zl < log_cap, np.rint(np.exp(zl)), np.exp(zl))
        # a draw that rounds to zero is extinction
        dead = z_new[h] == 0
        logz_new[h[dead]] = -np.inf
    return z_new, logz_new, ~exact


def _jump_generation(kind, x, gamma, z, logz, rng, cap=CAP):
    """Offspring at the big-jump generation, individual by individual.

    Returns ``(z_new, logz_new, log_max, huge)`` where ``log_max`` is the log
    of the largest single family.
    """
    m = x.size
    z_new = np.zeros(m)
    logz_new = np.full(m, -np.inf)
    log_max = np.full(m, -np.inf)
    huge = np.zeros(m, bool)
    log_cap = math.log(cap)
    indiv = z <= INDIVIDUAL_LIMIT
    ii = np.flatnonzero(indiv)
    if ii.size:
        counts = z[ii].astype(np.int64)
        total = int(counts.sum())
        seg = np.repeat(np.arange(ii.size), counts)
        xi = x[ii][seg]
        if kind in _LINEAR_FRACTIONAL:
            lr = log_odds(kind, xi, gamma[ii][seg])
            e = rng.standard_exponential(total)
            with np.errstate(over="ignore", divide="ignore"):
                lam = np.log1p(np.exp(-lr))  # -log p
                log_lam = np.where(lr < 700.0, np.log(lam), -lr)
                y = np.where(lr < 600.0, np.floor(e / np.where(lam > 0, lam, 1.0)), np.nan)
                logy = np.where(lr < 600.0, np.log(y), np.log(e) - log_lam)
            if kind == FRACTIONAL_ATOM:
                atom = rng.random(total) < gamma[ii][seg]
                logy[atom] = -np.inf
        elif kind == POISSON:
            lam = np.exp(xi)
            moderate = lam < 1e15
            y = np.empty(total)
            y[moderate] = rng.poisson(lam[moderate])
            lb = lam[~moderate]
            y[~moderate] = lb + np.sqrt(lb) * rng.standard_normal(lb.size)
            with np.errstate(divide="ignore"):
                logy = np.log(y)
        else:
            with np.errstate(divide="ignore"):
                logy = np.zeros(total)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        lmax = np.maximum.reduceat(logy, starts)
        with np.errstate(invalid="ignore", divide="ignore"):
            shifted = np.where(np.isfinite(lmax[seg]), logy - lmax[seg], -np.inf)
            lsum = lmax + np.log(np.add.reduceat(np.exp(shifted), starts))
        lsum[~np.isfinite(lmax)] = -np.inf
        log_max[ii] = lmax
        logz_new[ii] = lsum
        with np.errstate(over="ignore"):
            z_new[ii] = np.where(lsum < log_cap, np.rint(np.exp(lsum)), np.exp(lsum))
        huge[ii] = lsum >= log_cap
    jj = np.flatnonzero(~indiv)
    if jj.size:
        zj, lzj = _next_generation(kind, x[jj], gamma[jj], z[jj], logz[jj], rng, cap)[:2]
        xj = x[jj]
        logv = np.log(1.0 - rng.random(jj.size))  # log V, V in (0, 1]
        if kind in _LINEAR_FRACTIONAL:
            gj = gamma[jj]
            lk = logz[jj] + np.log1p(-gj)  # expected non-atom parents
            lr = log_odds(kind, xj, gj)
            with np.errstate(over="ignore", divide="ignore"):
                lam = np.log1p(np.exp(-lr))
                log_lam = np.where(lr < 700.0, np.log(lam), -lr)
                # max of k Exp(1): -log(1 - V^{1/k})
                max_e = -np.log(-np.expm1(logv / np.exp(lk)))
            lmx = np.log(max_e) - log_lam
        elif kind == POISSON:
            lam = np.exp(xj)
            quant = ndtri(np.exp(logv / z[jj]))
            lmx = np.log(np.maximum(lam + np.sqrt(lam) * quant, 1.0))
        else:
            lmx = np.zeros(jj.size)
        lzj = np.maximum(lzj, lmx)
        log_max[jj] = lmx
        logz_new[jj] = lzj
        with np.errstate(over="ignore"):
            z_new[jj] = np.where(lzj < log_cap, np.rint(np.exp(lzj)), np.exp(lzj))
        huge[jj] = True
    return z_new, logz_new, log_max, huge


def simulate_population(
    model,
    n: int,
    size: int,
    rng: np.random.Generator,
    *,
    z0: int = 1,
    jump_at=None,
    truncate_until=None,
    threshold: Optional[float] = None,
    record_big: bool = True,
    keep: str = "survivors",
    full_environment: bool = False,
    cap: float = CAP,
    environment=None,
) -> PathBatch:
    """Simulate ``size`` independent populations for ``n`` generations.

    Populations are sampled exactly (negative binomial, Poisson, binomial
    thinning) while the expected next generation stays below ``cap``; larger
    populations use a moment-matched gamma/normal draw and the path is
    flagged capped.  At the first generation whose increment exceeds
    ``threshold`` (default ``n a``), offspring are drawn individually and the
    largest family size is recorded.

    ``jump_at``/``truncate_until`` condition the environment as in
    :func:`bpresim.env_models.sample_environment`.  The environment of a path
    is only sampled while it is alive unless ``full_environment`` is set.
    ``keep`` selects which full trajectories are returned: ``"survivors"``,
    ``"all"`` or ``"none"``.  A pre-sampled ``environment=(x, gamma)`` of
    shape ``(size, n)`` replaces the internal environment draws.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    size = int(size)
    thr = n * model.a if threshold is None else float(threshold)
    kind = model.kind
    jump = None if jump_at is None else np.broadcast_to(np.asarray(jump_at, np.int64), (size,))
    trunc = None if truncate_until is None else np.broadcast_to(np.asarray(truncate_until, np.int64), (size,))

    if environment is not None:
        try:
            env_x = np.broadcast_to(np.asarray(environment[0], dtype=float), (size, n))
            env_g = np.broadcast_to(np.asarray(environment[1], dtype=float), (size, n))
        except ValueError:
            raise ConfigError("pre-sampled environment must broadcast to shape (size, n)") from None

    z = np.full(size, float(z0))
    logz = np.full(size, math.log(z0) if z0 > 0 else -np.inf)
    alive = z > 0
    capped = np.zeros(size, bool)
    u_n = np.full(size, -1, np.int64)
    log_n_big = np.full(size, np.nan)
    hist = []
    everyone = np.arange(size)

    for k in range(n):
        step = k + 1
        active = everyone if full_environment else np.flatnonzero(alive)
        na = active.size
        xk = np.empty(na)
        gk = np.empty(na)
        below = np.zeros(na, bool)
        above = np.zeros(na, bool)
        if jump is not None:
            ja = jump[active]
            below |= step < ja
            above |= step == ja
        if trunc is not None:
            below |= step <= trunc[active]
        below &= ~above
        free = ~(below | above)
        if environment is not None:
            xk[:] = env_x[active, k]
            gk[:] = env_g[active, k]
        else:
            for mask, mode in ((free, "free"), (below, "below"), (above, "above")):
                cnt = int(mask.sum())
                if cnt:
                    xs, gs = model.sample_x(rng, cnt, mode=mode, threshold=thr)
                    xk[mask] = xs
                    gk[mask] = gs

        first = (u_n[active] == -1) & (xk > thr)
        u_n[active[first]] = step

        live = alive[active]
        idx = active[live]
        xl, gl = xk[live], gk[live]
        jumping = (u_n[idx] == step) & record_big
        for sel, is_jump in ((~jumping, False), (jumping, True)):
            pid = idx[sel]
            if pid.size == 0:
                continue
            if is_jump:
                zn, lzn, lmx, hg = _jump_generation(kind, xl[sel], gl[sel], z[pid], logz[pid], rng, cap)
                log_n_big[pid] = lmx
            else:
                zn, lzn, hg = _next_generation(kind, xl[sel], gl[sel], z[pid], logz[pid], rng, cap)
            z[pid] = zn
            logz[pid] = lzn
            capped[pid] |= hg
        newly_dead = idx[z[idx] == 0]
        alive[newly_dead] = False
        if not full_environment:
            unknown = newly_dead[u_n[newly_dead] == -1]
            u_n[unknown] = -2 if step < n else -1
        hist.append((active, xk, gk, z[active].copy(), logz[active].copy()))

    if keep == "survivors":
        ids = np.flatnonzero(alive)
    elif keep == "all":
        ids = everyone
    elif keep == "none":
        ids = np.zeros(0, np.int64)
    else:
        raise ConfigError(f"unknown keep mode {keep!r}")
    m = ids.size
    xo = np.full((m, n), np.nan)
    go = np.full((m, n), np.nan)
    zo = np.zeros((m, n + 1))
    lzo = np.full((m, n + 1), -np.inf)
    zo[:, 0] = float(z0)
    lzo[:, 0] = math.log(z0) if z0 > 0 else -np.inf
    if m:
        for k, (active, xk, gk, zk, lzk) in enumerate(hist):
            if active.size == 0:
                continue
            pos_c = np.minimum(np.searchsorted(active, ids), active.size - 1)
            found = active[pos_c] == ids
            rows = np.flatnonzero(found)
            src = pos_c[found]
            xo[rows, k] = xk[src]
            go[rows, k] = gk[src]
            zo[rows, k + 1] = zk[src]
            lzo[rows, k + 1] = lzk[src]
    return PathBatch(
        n=n,
        kind=kind,
        threshold=thr,
        survived=alive.copy(),
        z_final=z,
        log_z_final=logz,
        capped=capped,
        u_n=u_n,
        log_n_big=log_n_big,
        ids=ids,
        x=xo,
        gamma=go,
        z=zo,
        log_z=lzo,
    )


def simulate_path(
    model,
    n: int,
    rng: np.random.Generator,
    z0: int = 1,
    record_big: bool = True,
    cap: float = CAP,
) -> PathRecord:
    """Simulate one population path together with its full environment."""
    batch = simulate_population(
        model, n, 1, rng, z0=z0, record_big=record_big, keep="all", full_environment=True, cap=cap
    )
    return batch.record(0)
