"""Monte Carlo estimators for survival, conditional laws and limit theorems.

Rare survival events are handled by a big-jump decomposition: the first
increment exceeding ``n a`` is forced at each position ``j`` (strata), the
prefix is truncated and the stratum weight ``A(na) P(X <= na)^(j-1)`` is
applied analytically.  The leftover event with no such increment is
estimated by a defensive-mixture importance sampler that forces one
moderate increment.  Conditional samples (survivors) are drawn exactly by
rejection from the same proposal.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .env_models import sample_environment, sample_environment_mixture
from .errors import ConfigError, NumericalError
from .process_core import simulate_population, survival_prob_batch
from .streams import as_generator, run_tasks, shard_sizes

Z95 = 1.959963984540054
SHARD = 20_000


# ---------------------------------------------------------------------------
# estimates


def _moments(values) -> tuple[int, float, float]:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return 0, 0.0, 0.0
    mean = float(v.mean())
    return v.size, mean, float(((v - mean) ** 2).sum())


def _pool(a: tuple, b: tuple) -> tuple[int, float, float]:
    """Chan's pooled (count, mean, M2)."""
    na, ma, qa = a
    nb, mb, qb = b
    n = na + nb
    if n == 0:
        return 0, 0.0, 0.0
    d = mb - ma
    return n, ma + d * nb / n, qa + qb + d * d * na * nb / n


def _pool_all(parts) -> tuple[int, float, float]:
    acc = (0, 0.0, 0.0)
    for p in parts:
        acc = _pool(acc, p)
    return acc


def _wilson(k: int, n: int) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    z2 = Z95 * Z95
    den = 1.0 + z2 / n
    centre = (p + z2 / (2 * n)) / den
    half = Z95 * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class Estimate:
    """Point estimate with standard error and a 95% interval.

    ``m2`` (sum of squared deviations) and ``successes`` are the sufficient
    statistics that make :meth:`merge` exact.
    """

    point: float
    stderr: float
    n_samples: int
    ci95: tuple[float, float]
    method: str = "naive"
    flags: tuple[str, ...] = ()
    m2: float = 0.0
    successes: Optional[int] = None

    @classmethod
    def from_moments(cls, moments, method: str = "conditional", flags=()) -> "Estimate":
        count, mean, m2 = moments
        if count == 0:
            nan = float("nan")
            return cls(nan, nan, 0, (nan, nan), method, tuple(flags) + ("empty",), 0.0)
        se = math.sqrt(m2 / (count - 1) / count) if count > 1 else float("inf")
        return cls(mean, se, int(count), (mean - Z95 * se, mean + Z95 * se), method, tuple(flags), m2)

    @classmethod
    def from_samples(cls, values, method: str = "conditional") -> "Estimate":
        return cls.from_moments(_moments(values), method)

    @classmethod
    def from_binomial(cls, k: int, n: int, method: str = "naive") -> "Estimate":
        k, n = int(k), int(n)
        if n == 0:
            return cls.from_moments((0, 0.0, 0.0), method)
        p = k / n
        flags = ("zero_successes",) if k == 0 else ()
        return cls(p, math.sqrt(p * (1 - p) / n), n, _wilson(k, n), method, flags, n * p * (1 - p), k)

    @classmethod
    def exact(cls, value: float, method: str = "naive") -> "Estimate":
        return cls(float(value), 0.0, 0, (float(value), float(value)), method, ("exact",))

    @property
    def relative_stderr(self) -> float:
        return self.stderr / abs(self.point) if self.point else float("inf")

    def merge(self, other: "Estimate") -> "Estimate":
        """Pool two estimates of the same quantity from independent samples."""
        if self.successes is not None and other.successes is not None:
            out = Estimate.from_binomial(self.successes + other.successes, self.n_samples + other.n_samples, self.method)
            return replace(out, flags=tuple(sorted(set(out.flags) | (set(self.flags) & set(other.flags)))))
        pooled = _pool((self.n_samples, self.point, self.m2), (other.n_samples, other.point, other.m2))
        return Estimate.from_moments(pooled, self.method)

    def scale(self, c: float) -> "Estimate":
        lo, hi = sorted((self.ci95[0] * c, self.ci95[1] * c))
        return Estimate(self.point * c, self.stderr * abs(c), self.n_samples, (lo, hi), self.method, self.flags, self.m2 * c * c)

    @staticmethod
    def combine(parts: Sequence["Estimate"], coeffs=None, method: str = "big_jump_is") -> "Estimate":
        """Linear combination of independent estimates (e.g. strata)."""
        coeffs = [1.0] * len(parts) if coeffs is None else list(coeffs)
        point = sum(c * p.point for c, p in zip(coeffs, parts))
        se = math.sqrt(sum((c * p.stderr) ** 2 for c, p in zip(coeffs, parts)))
        count = sum(p.n_samples for p in parts)
        return Estimate(point, se, count, (point - Z95 * se, point + Z95 * se), method)

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "ci95": list(self.ci95),
            "method": self.method,
            "flags": list(self.flags),
        }


# ---------------------------------------------------------------------------
# configuration of the big-jump machinery


@dataclass(frozen=True)
class BigJumpConfig:
    """Forced jump positions and the sequences ``h_n`` and ``delta_n``.

    ``h_n = h_scale * log n`` (or ``h_scale * n`` with ``h_form="linear"``)
    and ``delta_n = delta_scale / log n``.  ``mixture`` and
    ``remainder_share`` tune the sampler for the no-big-jump remainder.
    """

    j_max: Optional[int] = None
    h_scale: float = 1.0
    h_form: str = "log"
    delta_scale: float = 3.0
    mixture: tuple = ((0.1, 0.0, None, 0), (0.3, 0.5, None, 1), (0.3, 0.3, None, 1), (0.3, 0.2, None, 2))
    remainder_share: float = 0.4
    min_stratum: int = 200

    def components(self, threshold: float) -> tuple:
        """Mixture components with window bounds scaled by ``threshold``;
        ``mixture`` lists ``(weight, lo, hi, count)`` in threshold units."""
        return tuple(
            (w, lo * threshold, None if hi is None else hi * threshold, k) for w, lo, hi, k in self.mixture
        )

    def jmax(self, n: int) -> int:
        j = n if self.j_max is None else min(int(self.j_max), n)
        if j < 1:
            raise ConfigError("j_max must be at least 1")
        return j

    def h(self, n: int) -> float:
        if self.h_form == "log":
            return self.h_scale * math.log(n)
        if self.h_form == "linear":
            return self.h_scale * n
        raise ConfigError(f"unknown h_n form {self.h_form!r}")

    def delta(self, n: int) -> float:
        return self.delta_scale / math.log(n)

    def violations(self, grid: Sequence[int]) -> list[str]:
        """Numerical check of the growth conditions over an experiment grid."""
        out = []
        grid = sorted(int(n) for n in grid)
        if any(n < 3 for n in grid):
            return ["grid values must be at least 3"]
        h = np.array([self.h(n) for n in grid])
        excess = np.array([n * (self.delta(n) - 2.0 / math.log(n)) for n in grid])
        if np.any(h < 1.0) or np.any(h > np.array(grid)):
            out.append("h_n outside [1, n]")
        if np.any(np.diff(h) < 0):
            out.append("h_n not increasing")
        ratio = h / np.array(grid)
        if np.any(np.diff(ratio) > 1e-12) or ratio[-1] >= 0.5:
            out.append("h_n / n not small and decreasing")
        if np.any(excess <= 0):
            out.append("n (delta_n - 2/log n) not positive")
        if np.any(np.diff(excess) < 0):
            out.append("n (delta_n - 2/log n) not increasing")
        return out

    def check(self, grid: Sequence[int]) -> None:
        bad = self.violations(grid)
        if bad:
            raise ConfigError("; ".join(bad))


# ---------------------------------------------------------------------------
# survival probability


def _naive_task(rng, size, model, n, z0):
    batch = simulate_population(model, n, size, rng, z0=z0, keep="none", record_big=False)
    return int(batch.survived.sum())


def estimate_survival_naive(model, n: int, samples: int, rng=None, workers: int = 1, z0: int = 1) -> Estimate:
    """Binomial estimate of ``P(Z_n > 0)`` with a Wilson interval."""
    if n == 0:
        return Estimate.exact(1.0 if z0 > 0 else 0.0, "naive")
    rng = as_generator(rng)
    tasks = [(s, model, n, z0) for s in shard_sizes(samples, SHARD)]
    k = sum(run_tasks(_naive_task, tasks, rng, workers))
    est = Estimate.from_binomial(k, samples, "naive")
    if k < 100:
        warnings.warn(f"only {k} survivors among {samples} naive samples", RuntimeWarning, stacklevel=2)
        est = replace(est, flags=est.flags + ("few_successes",))
    return est


def _survive_from(u, z0):
    u = np.asarray(u, dtype=float)
    return u if z0 == 1 else -np.expm1(z0 * np.log1p(-np.minimum(u, 1.0)))


def _walk_min_exp(x):
    s = np.cumsum(x, axis=1)
    return np.exp(np.minimum(0.0, s.min(axis=1)))


def _no_descent(x):
    return (np.cumsum(x, axis=1).min(axis=1) >= 0.0).astype(float)


def _jump_task(rng, j, size, model, n, thr, quenched, z0, target="survival"):
    if target == "tau":
        x, _ = sample_environment(model, n, size, rng, jump_at=j, threshold=thr)
        v = _no_descent(x)
    elif quenched:
        x, g = sample_environment(model, n, size, rng, jump_at=j, threshold=thr)
        v = _survive_from(survival_prob_batch(model.kind, x, g), z0)
    else:
        v = simulate_population(
            model, n, size, rng, z0=z0, jump_at=j, threshold=thr, keep="none", record_big=False
        ).survived
    return _moments(v)


def _mixture_task(rng, size, model, n, thr, trunc, comps, quenched, z0, target="survival"):
    x, g, w = sample_environment_mixture(model, n, size, rng, comps, trunc, thr)
    if target == "tau":
        v = _no_descent(x)
    elif quenched:
        v = _survive_from(survival_prob_batch(model.kind, x, g), z0)
    else:
        v = simulate_population(
            model, n, size, rng, z0=z0, threshold=thr, keep="none", record_big=False, environment=(x, g)
        ).survived
    bound = np.minimum(1.0, z0 * _walk_min_exp(x))
    return _moments(w * v), _moments(w * bound)


@dataclass(frozen=True)
class BigJumpResult:
    """Big-jump decomposition of ``P(Z_n > 0)``.

    ``estimate = jump_part + remainder``; ``contributions[j-1]`` estimates
    ``P(Z_n > 0, U_n = j)`` and ``remainder_bound`` is an MC estimate of the
    upper bound ``E[exp(L_n); U_n > j_max]`` for the remainder.
    """

    n: int
    j_max: int
    threshold: float
    tail: float
    estimate: Estimate
    jump_part: Estimate
    remainder: Estimate
    remainder_bound: Estimate
    contributions: tuple[Estimate, ...]

    def contribution_ratios(self) -> np.ndarray:
        """``P(Z_n > 0, U_n = j) / A(na)`` for j = 1..j_max."""
        return np.array([c.point for c in self.contributions]) / self.tail

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "j_max": self.j_max,
            "threshold": self.threshold,
            "tail": self.tail,
            "estimate": self.estimate.to_dict(),
            "jump_part": self.jump_part.to_dict(),
            "remainder": self.remainder.to_dict(),
            "remainder_bound": self.remainder_bound.to_dict(),
        }


def estimate_survival_bigjump(
    model,
    n: int,
    samples: int,
    cfg: Optional[BigJumpConfig] = None,
    rng=None,
    workers: int = 1,
    quenched: bool = True,
    z0: int = 1,
    target: str = "survival",
) -> BigJumpResult:
    """Stratified big-jump importance sampling of ``P(Z_n > 0)``.

    With ``quenched`` each sampled environment contributes its exact
    quenched survival probability (a conditional expectation of the
    population indicator); otherwise populations are simulated.
    ``target="tau"`` estimates ``P(tau > n)`` for the walk instead.
    """
    if target not in ("survival", "tau"):
        raise ConfigError(f"unknown target {target!r}")
    if n < 1:
        raise ConfigError("n must be at least 1")
    cfg = cfg or BigJumpConfig()
    rng = as_generator(rng)
    j_max = cfg.jmax(n)
    thr = n * model.a
    tail = float(model.tail(thr))
    keep = 1.0 - tail

    live_j = [j for j in range(1, j_max + 1) if j == 1 or keep > 0.0]
    rem_weight = keep**j_max
    n_rem = int(round(cfg.remainder_share * samples)) if rem_weight > 0.0 else 0
    n_jump = max(samples - n_rem, 0)
    harmonic = 1.0 / np.arange(1, len(live_j) + 1)
    alloc = np.maximum(cfg.min_stratum, np.floor(n_jump * harmonic / harmonic.sum())).astype(int)

    tasks, owners = [], []
    for j, m in zip(live_j, alloc):
        for s in shard_sizes(int(m), SHARD):
            tasks.append((j, s, model, n, thr, quenched, z0, target))
            owners.append(j)
    results = run_tasks(_jump_task, tasks, rng, workers) if tasks else []
    per_j = {j: [] for j in live_j}
    for j, r in zip(owners, results):
        per_j[j].append(r)
    contributions = []
    for j in range(1, j_max + 1):
        if j in per_j:
            est = Estimate.from_moments(_pool_all(per_j[j]), "big_jump_is")
            contributions.append(est.scale(tail * keep ** (j - 1)))
        else:
            contributions.append(Estimate.exact(0.0, "big_jump_is"))
    jump_part = Estimate.combine(contributions)

    if n_rem:
        comps = cfg.components(thr)
        rem_tasks = [(s, model, n, thr, j_max, comps, quenched, z0, target) for s in shard_sizes(n_rem, SHARD)]
        rem_rng = rng.spawn(1)[0]
        out = run_tasks(_mixture_task, rem_tasks, rem_rng, workers)
        remainder = Estimate.from_moments(_pool_all(o[0] for o in out), "big_jump_is").scale(rem_weight)
        bound = Estimate.from_moments(_pool_all(o[1] for o in out), "big_jump_is").scale(rem_weight)
    else:
        remainder = Estimate.exact(0.0, "big_jump_is")
        bound = Estimate.exact(0.0, "big_jump_is")
    total = Estimate.combine([jump_part, remainder])
    return BigJumpResult(n, j_max, thr, tail, total, jump_part, remainder, bound, tuple(contributions))


def estimate_tau_tail(model, n: int, samples: int, cfg: Optional[BigJumpConfig] = None, rng=None, workers: int = 1) -> BigJumpResult:
    """Big-jump estimate of ``P(tau > n) = P(L_n >= 0)``."""
    return estimate_survival_bigjump(model, n, samples, cfg, rng, workers, target="tau")


# ---------------------------------------------------------------------------
# exact conditional samples


@dataclass
class SurvivorSample:
    """Paths drawn exactly from a conditional law by rejection.

    With ``method="big_jump_is"`` the event is intersected with
    ``{U_n <= j_hi}``; ``proposal_mass`` is ``P(U_n <= j_hi)`` so that
    ``event_probability()`` estimates ``P(event, U_n <= j_hi)``.
    """

    n: int
    kind: str
    threshold: float
    method: str
    condition: str
    j_hi: int
    proposal_mass: float
    proposals: int
    x: np.ndarray
    gamma: np.ndarray
    z: np.ndarray
    log_z: np.ndarray
    u_n: np.ndarray
    log_n_big: np.ndarray
    capped: np.ndarray
    flags: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return int(self.u_n.size)

    @property
    def s(self) -> np.ndarray:
        return np.concatenate((np.zeros((self.size, 1)), np.cumsum(self.x, axis=1)), axis=1)

    def event_probability(self) -> Estimate:
        return Estimate.from_binomial(self.size, self.proposals, self.method).scale(self.proposal_mass)


def _jump_position_law(model, n: int, j_hi: int):
    tail = float(model.tail(n * model.a))
    keep = 1.0 - tail
    w = keep ** np.arange(j_hi)
    if not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise NumericalError("degenerate jump position law", tail=tail)
    return w / w.sum(), tail * float(w.sum())


def _harvest_task(rng, size, model, n, thr, probs, condition, h, log_explode, z0):
    if probs is None:
        jump = None
    else:
        jump = rng.choice(probs.size, size=size, p=probs) + 1
    b = simulate_population(model, n, size, rng, z0=z0, jump_at=jump, threshold=thr, keep="survivors")
    sel = np.ones(b.ids.size, bool)
    if condition == "explosion":
        u = b.u_n[b.ids]
        lnb = b.log_n_big[b.ids]
        sel = (u >= 1) & (u < h) & (np.nan_to_num(lnb, nan=-np.inf) >= log_explode)
    ids = b.ids[sel]
    return (
        b.x[sel],
        b.gamma[sel],
        b.z[sel],
        b.log_z[sel],
        b.u_n[ids],
        b.log_n_big[ids],
        b.capped[ids],
    )


def harvest_survivors(
    model,
    n: int,
    min_survivors: int,
    rng=None,
    *,
    cfg: Optional[BigJumpConfig] = None,
    method: str = "big_jump_is",
    condition: str = "survival",
    workers: int = 1,
    max_proposals: int = 100_000_000,
    z0: int = 1,
) -> SurvivorSample:
    """Collect at least ``min_survivors`` paths conditioned on survival.

    ``condition="explosion"`` additionally requires ``U_n < h_n`` and
    ``N_{U_n} >= exp(n (a + delta_n))``.  The big-jump method proposes the
    jump position ``j`` with probability proportional to ``P(X <= na)^(j-1)``
    and accepts survivors, which reproduces the conditional law exactly on
    ``{U_n <= j_hi}``.
    """
    if method not in ("big_jump_is", "naive"):
        raise ConfigError(f"unknown harvesting method {method!r}")
    if condition not in ("survival", "explosion"):
        raise ConfigError(f"unknown conditioning event {condition!r}")
    cfg = cfg or BigJumpConfig()
    rng = as_generator(rng)
    thr = n * model.a
    h = cfg.h(n)
    log_explode = n * (model.a + cfg.delta(n))
    j_hi = cfg.jmax(n)
    if condition == "explosion":
        j_hi = min(j_hi, max(1, math.ceil(h) - 1))
    if method == "big_jump_is":
        probs, mass = _jump_position_law(model, n, j_hi)
    else:
        probs, mass = None, 1.0

    parts, proposals, accepted = [], 0, 0
    round_size = 2 * SHARD
    while accepted < min_survivors and proposals < max_proposals:
        tasks = [(s, model, n, thr, probs, condition, h, log_explode, z0) for s in shard_sizes(round_size, SHARD)]
        out = run_tasks(_harvest_task, tasks, rng.spawn(1)[0], workers)
        parts.extend(out)
        proposals += round_size
        accepted += sum(o[4].size for o in out)
        rate = max(accepted, 1) / proposals
        need = (min_survivors - accepted) / rate * 1.1
        round_size = int(min(max(need, SHARD), 50 * SHARD, max_proposals - proposals))
        round_size = max(round_size, 1)
    flags = () if accepted >= min_survivors else ("insufficient_survivors",)
    cat = [np.concatenate([p[i] for p in parts]) if parts else np.zeros(0) for i in range(7)]
    x, gamma, z, log_z = (c.reshape(-1, n if i < 2 else n + 1) for i, c in enumerate(cat[:4]))
    return SurvivorSample(
        n=n,
        kind=model.kind,
        threshold=thr,
        method=method,
        condition=condition,
        j_hi=j_hi,
        proposal_mass=mass,
        proposals=proposals,
        x=x,
        gamma=gamma,
        z=z,
        log_z=log_z,
        u_n=cat[4].astype(np.int64),
        log_n_big=cat[5],
        capped=cat[6].astype(bool),
        flags=flags,
    )


@dataclass
class WalkSample:
    """Walk paths conditioned on ``{tau > n}`` (no strict descent below 0)."""

    n: int
    method: str
    j_hi: int
    proposal_mass: float
    proposals: int
    x: np.ndarray
    u_n: np.ndarray
    flags: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return int(self.u_n.size)

    def event_probability(self) -> Estimate:
        return Estimate.from_binomial(self.size, self.proposals, self.method).scale(self.proposal_mass)


def _first_big(x, thr):
    big = x > thr
    return np.where(big.any(axis=1), big.argmax(axis=1) + 1, -1)


def _walk_harvest_task(rng, size, model, n, thr, probs):
    if probs is not None:
        jump = rng.choice(probs.size, size=size, p=probs) + 1
        x, _ = sample_environment(model, n, size, rng, jump_at=jump, threshold=thr)
        keep = np.cumsum(x, axis=1).min(axis=1) >= 0.0
        return x[keep], _first_big(x[keep], thr)
    # lazy naive walks: most descend below zero within a step or two
    x = np.empty((size, n))
    s = np.zeros(size)
    alive = np.arange(size)
    for k in range(n):
        xs, _ = model.sample_x(rng, alive.size)
        x[alive, k] = xs
        s[alive] += xs
        alive = alive[s[alive] >= 0.0]
        if alive.size == 0:
            break
    return x[alive], _first_big(x[alive], thr)


def harvest_walks(
    model,
    n: int,
    min_count: int,
    rng=None,
    *,
    cfg: Optional[BigJumpConfig] = None,
    method: str = "big_jump_is",
    workers: int = 1,
    max_proposals: int = 200_000_000,
) -> WalkSample:
    """Walks conditioned on ``{tau > n}``; same proposal as :func:`harvest_survivors`."""
    cfg = cfg or BigJumpConfig()
    rng = as_generator(rng)
    thr = n * model.a
    j_hi = cfg.jmax(n)
    if method == "big_jump_is":
        probs, mass = _jump_position_law(model, n, j_hi)
    elif method == "naive":
        probs, mass = None, 1.0
    else:
        raise ConfigError(f"unknown harvesting method {method!r}")
    shard = SHARD if method == "big_jump_is" else 10 * SHARD
    xs, us, proposals, accepted = [], [], 0, 0
    round_size = 2 * shard
    while accepted < min_count and proposals < max_proposals:
        tasks = [(s, model, n, thr, probs) for s in shard_sizes(round_size, shard)]
        for x, u in run_tasks(_walk_harvest_task, tasks, rng.spawn(1)[0], workers):
            xs.append(x)
            us.append(u)
            accepted += u.size
        proposals += round_size
        rate = max(accepted, 1) / proposals
        need = (min_count - accepted) / rate * 1.1
        round_size = max(1, int(min(max(need, shard), 100 * shard, max_proposals - proposals)))
    flags = () if accepted >= min_count else ("insufficient_survivors",)
    x = np.concatenate(xs).reshape(-1, n) if xs else np.zeros((0, n))
    u = np.concatenate(us).astype(np.int64) if us else np.zeros(0, np.int64)
    return WalkSample(n, method, j_hi, mass, proposals, x, u, flags)


def _tau_mixture_task(rng, size, model, n, thr, trunc, comps):
    x, _, w = sample_environment_mixture(model, n, size, rng, comps, trunc, thr)
    v = np.cumsum(x, axis=1).min(axis=1) >= 0.0
    return _moments(w * v)


def _survival_remainder(model, n, samples, cfg, rng, workers, condition):
    """``P(event, U_n > j_max)`` by the defensive mixture sampler."""
    thr = n * model.a
    j_max = cfg.jmax(n)
    weight = (1.0 - float(model.tail(thr))) ** j_max
    if weight <= 0.0 or samples <= 0:
        return Estimate.exact(0.0, "big_jump_is")
    comps = cfg.components(thr)
    if condition == "tau":
        tasks = [(s, model, n, thr, j_max, comps) for s in shard_sizes(samples, SHARD)]
        out = run_tasks(_tau_mixture_task, tasks, rng, workers)
        return Estimate.from_moments(_pool_all(out), "big_jump_is").scale(weight)
    tasks = [(s, model, n, thr, j_max, comps, True, 1) for s in shard_sizes(samples, SHARD)]
    out = run_tasks(_mixture_task, tasks, rng, workers)
    return Estimate.from_moments(_pool_all(o[0] for o in out), "big_jump_is").scale(weight)


# ---------------------------------------------------------------------------
# conditional law of U_n


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p - q).sum())


def restricted_tv(p, q, j_hi: int = 10) -> float:
    """TV distance between two laws on ``1..j_hi`` after renormalising both."""
    p = np.asarray(p, dtype=float)[:j_hi]
    q = np.asarray(q, dtype=float)[:j_hi]
    if p.sum() <= 0 or q.sum() <= 0:
        return 1.0
    return total_variation(p / p.sum(), q / q.sum())


@dataclass
class UnLaw:
    """Conditional law of ``U_n`` (masses for j = 1..n plus "no big jump")."""

    n: int
    condition: str
    method: str
    masses: np.ndarray
    none_mass: float
    per_j: list
    none: Estimate
    n_survivors: int
    flags: tuple[str, ...] = ()

    def restricted(self, j_hi: int = 10) -> np.ndarray:
        m = self.masses[:j_hi]
        return m / m.sum() if m.sum() > 0 else m

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "condition": self.condition,
            "method": self.method,
            "masses": [float(v) for v in self.masses],
            "none_mass": self.none_mass,
            "n_survivors": self.n_survivors,
            "flags": list(self.flags),
        }


def conditional_un_distribution(
    model,
    n: int,
    min_survivors: int = 2000,
    cfg: Optional[BigJumpConfig] = None,
    rng=None,
    *,
    method: str = "big_jump_is",
    condition: str = "survival",
    remainder_samples: int = 200_000,
    workers: int = 1,
    sample=None,
) -> UnLaw:
    """Law of ``U_n`` given ``{Z_n > 0}`` (or given ``{tau > n}``).

    The big-jump method gets the law on ``{U_n <= n}`` from exact conditional
    samples and the mass of ``{U_n undefined}`` from the ratio of the
    remainder estimate to the total.  A previously harvested ``sample`` may
    be supplied to avoid recomputation.
    """
    if condition not in ("survival", "tau"):
        raise ConfigError(f"unknown conditioning event {condition!r}")
    cfg = cfg or BigJumpConfig()
    rng = as_generator(rng)
    flags = [] if min_survivors >= 1000 else ["below_recommended_survivors"]
    if sample is None:
        if condition == "survival":
            sample = harvest_survivors(model, n, min_survivors, rng, cfg=cfg, method=method, workers=workers)
        else:
            sample = harvest_walks(model, n, min_survivors, rng, cfg=cfg, method=method, workers=workers)
    flags.extend(sample.flags)
    u = sample.u_n
    m = sample.size
    counts = np.array([(u == j).sum() for j in range(1, n + 1)])
    if method == "naive":
        none = Estimate.from_binomial(int((u == -1).sum()), m, "conditional")
        per_j = [Estimate.from_binomial(int(c), m, "conditional") for c in counts]
        masses = counts / max(m, 1)
        return UnLaw(n, condition, method, masses, none.point, per_j, none, m, tuple(flags))

    jump = sample.event_probability()
    rem = _survival_remainder(model, n, remainder_samples, cfg, rng.spawn(1)[0], workers, condition)
    tot = jump.point + rem.point
    r = rem.point / tot if tot > 0 else float("nan")
    se = math.hypot(jump.point * rem.stderr, rem.point * jump.stderr) / tot**2 if tot > 0 else float("nan")
    none = Estimate(r, se, rem.n_samples, (r - Z95 * se, r + Z95 * se), "conditional")
    per_j = [Estimate.from_binomial(int(c), m, "conditional").scale(1.0 - r) for c in counts]
    masses = counts / max(m, 1) * (1.0 - r)
    return UnLaw(n, condition, method, masses, r, per_j, none, m, tuple(flags))


# ---------------------------------------------------------------------------
# explosion at the big jump


@dataclass
class ExplosionStats:
    n: int
    h_n: float
    delta_n: float
    early: float
    explosion: float
    both: float
    both_given_jump: float
    none_mass: float
    n_survivors: int
    tv_to_conditioned: float
    max_offspring_consistent: bool
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def explosion_statistics(
    model,
    n: int,
    survivors: SurvivorSample,
    cfg: Optional[BigJumpConfig] = None,
    rng=None,
    none_mass: Optional[float] = None,
) -> ExplosionStats:
    """Frequencies of ``{U_n < h_n}``, ``{N_{U_n} >= e^{n(a + delta_n)}}`` and
    their intersection among survivors.

    For a big-jump sample (which only covers ``{U_n <= n}``) the survivors
    without any big increment are accounted for through ``none_mass``,
    estimated here when not supplied.  ``tv_to_conditioned`` is the TV
    distance between the laws of the summary ``(U_n, explosion indicator)``
    given survival and given the explosion event.
    """
    cfg = cfg or BigJumpConfig()
    h = cfg.h(n)
    delta = cfg.delta(n)
    flags = tuple(cfg.violations([n, 2 * n]))
    u = survivors.u_n
    lnb = np.nan_to_num(survivors.log_n_big, nan=-np.inf)
    early = (u >= 1) & (u < h)
    expl = lnb >= n * (model.a + delta)
    both = early & expl
    m = max(survivors.size, 1)
    if survivors.method == "naive":
        r = float((u == -1).sum()) / m
        scale = 1.0
        given_jump = float(both[u >= 1].mean()) if (u >= 1).any() else float("nan")
    else:
        if none_mass is None:
            law = conditional_un_distribution(model, n, cfg=cfg, rng=as_generator(rng), sample=survivors)
            none_mass = law.none_mass
        r = float(none_mass)
        scale = 1.0 - r
        given_jump = float(both.mean()) if survivors.size else float("nan")
    f_early = float(early.sum()) / m * scale
    f_expl = float(expl.sum()) / m * scale
    f_both = float(both.sum()) / m * scale
    # the summary law under the explosion event puts all mass on the early,
    # exploded cells, so the TV distance is the survivor mass outside them
    tv = 1.0 - f_both
    # N_{U_n} is one family inside Z_{U_n}
    rows = np.flatnonzero(u >= 1)
    log_zu = survivors.log_z[rows, u[rows]]
    ok = bool(np.all(~np.isfinite(lnb[rows]) | (lnb[rows] <= log_zu + 1e-9)))
    return ExplosionStats(n, h, delta, f_early, f_expl, f_both, given_jump, r, survivors.size, tv, ok, flags)


# ---------------------------------------------------------------------------
# functional limit theorem statistics


def ks_statistic(samples, cdf) -> tuple[float, float]:
    """Two-sided one-sample KS statistic and asymptotic p-value.

    ``cdf`` is a callable or any object with a ``cdf`` method.
    """
    v = np.asarray(samples, dtype=float).ravel()
    if np.isnan(v).any():
        raise NumericalError("NaN in KS sample")
    if v.size < 8:
        raise ConfigError("KS statistic needs at least 8 samples")
    fn = cdf.cdf if hasattr(cdf, "cdf") else cdf
    res = stats.kstest(v, fn, method="asymp")
    return float(res.statistic), float(res.pvalue)


DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass
class FltSample:
    """Grid statistics of conditioned survivors.

    ``ratio[i, k] = R(t_k)`` and ``clt[i, k] = W(t_k)`` for survivor ``i``.
    """

    grid: np.ndarray
    ratio: np.ndarray
    clt: np.ndarray
    u_n: np.ndarray
    log_n_big: np.ndarray
    capped: np.ndarray


@dataclass
class FltReport:
    sample: FltSample
    n: int
    ks_w1: tuple[float, float]
    ks_increment: tuple[float, float]
    eps: float
    ratio_mean: np.ndarray
    ratio_max_dev: float
    ks_by_t: np.ndarray
    cov: np.ndarray
    cov_theory: np.ndarray
    corr_half_one: float
    n_survivors: int
    n_capped: int
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_survivors": self.n_survivors,
            "n_capped": self.n_capped,
            "grid": [float(t) for t in self.sample.grid],
            "ks_w1": list(self.ks_w1),
            "ks_increment": list(self.ks_increment),
            "eps": self.eps,
            "ratio_mean": [float(v) for v in self.ratio_mean],
            "ratio_max_dev": self.ratio_max_dev,
            "ks_by_t": [float(v) for v in self.ks_by_t],
            "corr_half_one": self.corr_half_one,
            "max_cov_error": float(np.max(np.abs(self.cov - self.cov_theory))),
            "flags": list(self.flags),
        }


def flt_sample(model, survivors: SurvivorSample, grid=DEFAULT_GRID) -> FltSample:
    n = survivors.n
    grid = np.asarray(grid, dtype=float)
    u = survivors.u_n
    if np.any(u < 1):
        raise ConfigError("FLT statistics need survivors with a big jump")
    rows = np.arange(survivors.size)[:, None]
    idx = np.maximum(np.floor(n * grid + 1e-9).astype(np.int64)[None, :], u[:, None])
    s = survivors.s
    lz = survivors.log_z
    lz_u = lz[rows[:, 0], u][:, None]
    s_u = s[rows[:, 0], u][:, None]
    dlz = lz[rows, idx] - lz_u
    ratio = np.exp(dlz - (s[rows, idx] - s_u))
    clt = (dlz + n * grid[None, :] * model.a) / (model.sigma * math.sqrt(n))
    return FltSample(grid, ratio, clt, u.copy(), survivors.log_n_big.copy(), survivors.capped.copy())


def flt_suite(model, n: int, survivors: SurvivorSample, grid=DEFAULT_GRID, cfg=None, rng=None, eps: float = 0.2) -> FltReport:
    """Yaglom-type functional limit statistics on conditioned survivors."""
    if survivors.n != n:
        raise ConfigError("survivor sample was drawn for a different n")
    smp = flt_sample(model, survivors, grid)
    g = smp.grid
    flags = []
    finite = np.isfinite(smp.clt).all(axis=1) & np.isfinite(smp.ratio).all(axis=1)
    if not finite.all():
        flags.append(f"{int((~finite).sum())} paths with non-finite statistics excluded")
    w = smp.clt[finite]
    r = smp.ratio[finite]
    if w.shape[0] < 8:
        raise NumericalError("too few usable survivor paths for FLT statistics", usable=int(w.shape[0]))
    k1 = int(np.argmin(np.abs(g - 1.0)))
    ke = int(np.argmin(np.abs(g - eps)))
    kh = int(np.argmin(np.abs(g - 0.5)))
    ks_w1 = ks_statistic(w[:, k1], stats.norm(0.0, math.sqrt(g[k1])))
    ks_inc = ks_statistic(w[:, k1] - w[:, ke], stats.norm(0.0, math.sqrt(g[k1] - g[ke])))
    ks_by_t = np.array([ks_statistic(w[:, k], stats.norm(0.0, math.sqrt(t)))[0] if t > 0 else 0.0 for k, t in enumerate(g)])
    ratio_mean = r.mean(axis=0)
    pos = g > 0
    cov = np.cov(w[:, pos], rowvar=False)
    cov_theory = np.minimum.outer(g[pos], g[pos])
    corr = float(np.corrcoef(w[:, kh], w[:, k1])[0, 1])
    return FltReport(
        sample=smp,
        n=n,
        ks_w1=ks_w1,
        ks_increment=ks_inc,
        eps=float(g[ke]),
        ratio_mean=ratio_mean,
        ratio_max_dev=float(np.max(np.abs(ratio_mean - 1.0))),
        ks_by_t=ks_by_t,
        cov=cov,
        cov_theory=cov_theory,
        corr_half_one=corr,
        n_survivors=int(w.shape[0]),
        n_capped=int(smp.capped[finite].sum()),
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# heavy-tailed walk expectations by mixture importance sampling


def _walk_mixture_task(rng, size, model, n, comps, fn, args):
    x, _, w = sample_environment_mixture(model, n, size, rng, comps)
    return _moments(w * fn(np.cumsum(x, axis=1), *args))


def _neg_part_exp(s):
    sn = s[:, -1]
    return np.where(sn < 0.0, np.exp(np.minimum(sn, 0.0)), 0.0)


def _window(s, lo, hi, shift):
    v = s[:, -1] + shift
    return ((v >= lo) & (v < hi)).astype(float)


def walk_mixture(level: float) -> tuple:
    """Mixture for free walks whose rare event needs one jump near ``level``."""
    return ((0.1, 0.0, None, 0), (0.6, 0.6 * level, None, 1), (0.3, 0.3 * level, None, 1))


def walk_expectation_mixture(
    model, n: int, fn: Callable, samples: int, rng=None, *, components, args=(), workers=1
) -> Estimate:
    """``E[fn(S)]`` for an ``n``-step free walk under the mixture sampler."""
    rng = as_generator(rng)
    tasks = [(s, model, n, tuple(components), fn, args) for s in shard_sizes(samples, SHARD)]
    out = run_tasks(_walk_mixture_task, tasks, rng, workers)
    return Estimate.from_moments(_pool_all(out), "big_jump_is")


def negative_part_expectation(model, n: int, samples: int, rng=None, workers=1) -> Estimate:
    """``E[e^{S_n}; S_n < 0]``, dominated by one jump of size about ``an``."""
    comps = walk_mixture(n * model.a)
    return walk_expectation_mixture(model, n, _neg_part_exp, samples, rng, components=comps, workers=workers)


def local_window_probability(model, n: int, x: float, h: float, samples: int, rng=None, workers=1) -> Estimate:
    """``P(S_n + na in [x, x+h))`` for the centred walk."""
    return walk_expectation_mixture(
        model, n, _window, samples, rng, components=walk_mixture(x), args=(x, x + h, n * model.a), workers=workers
    )
