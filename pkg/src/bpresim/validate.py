"""Acceptance checks shared by the test suite and the ``validate`` command.

Each ``check_*`` function runs one criterion at full scale (``scale=1``)
and returns a :class:`CheckResult` with the measured quantities, so the
numbers behind every pass or fail are reported, not just the verdict.
"""

from __future__ import annotations

import math
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import asymptotics as asy
from . import montecarlo as mc
from .env_models import (
    PARETO_FRACTIONAL_ATOM,
    PARETO_GEOMETRIC,
    PARETO_POISSON,
    EnvironmentModel,
    FixedEnvironment,
    OffspringLaw,
    sample_environment,
)
from .errors import NumericalError
from .process_core import (
    EnvRealization,
    compose_pgf,
    exact_survival_prob_batch,
    log_second_moment_batch,
    second_moment,
    simulate_population,
)
from .streams import stream


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self) -> str:
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] criterion {self.number:>2} {self.title}: {shown} ({self.elapsed:.1f}s)"

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed, "metrics": self.metrics}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _n(count: int, scale: float) -> int:
    return max(1, int(round(count * scale)))


DEFAULT = EnvironmentModel(PARETO_GEOMETRIC)
FRACTIONAL = EnvironmentModel(PARETO_FRACTIONAL_ATOM)
POISSON_MODEL = EnvironmentModel(PARETO_POISSON)


# ---------------------------------------------------------------------------
# oracles


def truncated_distribution(laws, kmax: int) -> np.ndarray:
    """Law of ``Z_n`` on ``0..kmax`` by exhaustive convolution of truncated
    offspring laws (the mass above ``kmax`` is dropped)."""
    dist = np.zeros(kmax + 1)
    dist[1] = 1.0
    for law in laws:
        pmf = law.pmf(kmax)
        new = np.zeros(kmax + 1)
        new[0] += dist[0]
        power = np.zeros(kmax + 1)
        power[0] = 1.0
        for z in range(1, kmax + 1):
            power = np.convolve(power, pmf)[: kmax + 1]
            if dist[z] > 0:
                new += dist[z] * power
        dist = new
    return dist


def _env_rows(model, rows, n, rng, max_walk: Optional[float] = None):
    """Environments from ``model``; with ``max_walk``, redraw rows whose walk
    exceeds it (keeps populations within exact integer range)."""
    x, g = sample_environment(model, n, rows, rng)
    if max_walk is None:
        return x, g
    for _ in range(1000):
        bad = np.cumsum(x, axis=1).max(axis=1) > max_walk
        if not bad.any():
            return x, g
        xb, gb = sample_environment(model, n, int(bad.sum()), rng)
        x[bad], g[bad] = xb, gb
    raise NumericalError("could not draw tame environments")


# ---------------------------------------------------------------------------
# criteria


def check_formula_equivalence(seed: int = 1, scale: float = 1.0) -> CheckResult:
    t0 = time.perf_counter()
    rng = stream(seed, 1)
    worst = {}
    evaluations = 0
    for model in (DEFAULT, FRACTIONAL, POISSON_MODEL):
        x, g = sample_environment(model, 50, 1000, rng)
        direct, formula = exact_survival_prob_batch(model.kind, x, g, check_bounds=True)
        evaluations += x.size
        worst[model.kind] = float(np.max(np.abs(direct - formula) / direct))
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-10 for v in worst.values()) and elapsed < 10.0
    metrics = {f"max_rel_err_{k}": v for k, v in worst.items()}
    metrics["g_evaluations"] = evaluations
    return CheckResult(1, "exact-formula equivalence", ok, metrics, elapsed)


def _second_moment_mc(x, g, paths, rng, shard=1_000_000):
    n = x.size
    tot = (0, 0.0, 0.0)
    for size in [shard] * (paths // shard) + ([paths % shard] if paths % shard else []):
        b = simulate_population(
            DEFAULT, n, size, rng, environment=(x[None, :], g[None, :]), keep="none", record_big=False
        )
        if b.capped.any():
            raise NumericalError("population left the exact range in a second-moment check")
        tot = mc._pool(tot, mc._moments(b.z_final**2))
    return mc.Estimate.from_moments(tot)


def check_second_moment(seed: int = 1, scale: float = 1.0) -> CheckResult:
    t0 = time.perf_counter()
    rng = stream(seed, 2)
    x, g = _env_rows(DEFAULT, 20, 5, rng, max_walk=6.0)
    exact = np.exp(log_second_moment_batch(DEFAULT.kind, x, g))
    exact_survival_prob_batch(DEFAULT.kind, x, g, check_bounds=True)
    paths = _n(10_000_000, scale)
    zs = []
    for row in range(20):
        est = _second_moment_mc(x[row], g[row], paths, rng)
        zs.append((est.point - exact[row]) / est.stderr)
    # exhaustive convolution on tiny geometric environments
    conv_err = 0.0
    for p_list in ([0.3, 0.5, 0.4], [0.6, 0.2, 0.45], [0.25, 0.25, 0.5], [0.55, 0.35, 0.3], [0.4, 0.6, 0.2]):
        laws = [OffspringLaw.geometric(p) for p in p_list]
        env = EnvRealization.from_laws(laws)
        dist = truncated_distribution(laws, 600)
        k = np.arange(dist.size)
        m2 = float((dist * k * k).sum())
        conv_err = max(conv_err, abs(m2 - second_moment(env)))
    ok = max(abs(z) for z in zs) <= 4.0 and conv_err <= 1e-8
    metrics = {"max_abs_z": max(abs(z) for z in zs), "paths_per_env": paths, "convolution_abs_err": conv_err}
    return CheckResult(2, "second-moment formula", ok, metrics, time.perf_counter() - t0)


def check_g_bounds(seed: int = 1, scale: float = 1.0) -> CheckResult:
    """Re-evaluates every g_k of criteria 1 and 2 with the hard assertion on."""
    t0 = time.perf_counter()
    count = 0
    try:
        rng = stream(seed, 1)
        for model in (DEFAULT, FRACTIONAL, POISSON_MODEL):
            x, g = sample_environment(model, 50, 1000, rng)
            exact_survival_prob_batch(model.kind, x, g, check_bounds=True)
            count += x.size
        x, g = _env_rows(DEFAULT, 20, 5, stream(seed, 2), max_walk=6.0)
        exact_survival_prob_batch(DEFAULT.kind, x, g, check_bounds=True)
        count += x.size
        ok, detail = True, "none"
    except NumericalError as exc:
        ok, detail = False, str(exc.diagnostics)
    return CheckResult(3, "g_k bounds", ok, {"evaluations": count, "violation": detail}, time.perf_counter() - t0)


def check_survival_ratio(seed: int = 1, scale: float = 1.0, workers: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    K = asy.const_K(DEFAULT, 60, _n(200_000, scale), stream(seed, 4, 0), workers)
    ratios, rse, jump_ratios = {}, {}, {}
    for n in (40, 60, 80):
        res = mc.estimate_survival_bigjump(DEFAULT, n, _n(1_500_000, scale), mc.BigJumpConfig(), stream(seed, 4, n), workers)
        denom = K.value * res.tail
        ratios[n] = res.estimate.point / denom
        jump_ratios[n] = res.jump_part.point / denom
        rse[n] = res.estimate.relative_stderr
    elapsed = time.perf_counter() - t0
    ok = (
        all(v < 0.02 for v in rse.values())
        and abs(ratios[80] - 1) < 0.25
        and abs(ratios[80] - 1) <= abs(ratios[40] - 1) + 0.05
        and elapsed < 300
    )
    metrics = {
        "K": K.value,
        "r40": ratios[40],
        "r60": ratios[60],
        "r80": ratios[80],
        "max_rel_se": max(rse.values()),
        "jump_only_r80": jump_ratios[80],
    }
    return CheckResult(4, "survival ratio", ok, metrics, elapsed)


def check_tau_tail(seed: int = 1, scale: float = 1.0, workers: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    D = asy.const_D(DEFAULT, 200, _n(1_000_000, scale), stream(seed, 5, 0), workers)
    ratio = {}
    for n in (40, 80):
        res = mc.estimate_tau_tail(DEFAULT, n, _n(600_000, scale), None, stream(seed, 5, n), workers)
        ratio[n] = res.estimate.point / asy.tau_tail_law(DEFAULT, D, n)
    ok = 0.75 <= ratio[80] <= 1.25 and abs(ratio[80] - 1) <= abs(ratio[40] - 1) + 0.05
    return CheckResult(5, "descent-time tail", ok, {"D": D.value, "r40": ratio[40], "r80": ratio[80]}, time.perf_counter() - t0)


def check_yaglom_un(seed: int = 1, scale: float = 1.0, workers: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    tvs, surv, none = {}, {}, {}
    for tag, model in ((1, DEFAULT), (2, FRACTIONAL)):
        K = asy.const_K(model, 60, _n(200_000, scale), stream(seed, 6, tag, 0), workers)
        law = mc.conditional_un_distribution(
            model, 60, max(2000, _n(2000, scale)), rng=stream(seed, 6, tag, 1), workers=workers
        )
        theory, _ = asy.yaglom_masses(K, 10)
        tvs[model.family] = mc.restricted_tv(law.masses, theory, 10)
        surv[model.family] = law.n_survivors
        none[model.family] = law.none_mass
    ok = all(v < 0.10 for v in tvs.values()) and all(v >= 2000 for v in surv.values())
    metrics = {f"tv_{k}": v for k, v in tvs.items()}
    metrics.update({f"survivors_{k}": v for k, v in surv.items()})
    metrics.update({f"no_jump_mass_{k}": v for k, v in none.items()})
    return CheckResult(6, "conditional law of U_n", ok, metrics, time.perf_counter() - t0)


def check_durrett(seed: int = 1, scale: float = 1.0, workers: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    E = asy.const_E_tau(DEFAULT, _n(1_000_000, scale), rng=stream(seed, 7, 0), workers=workers)
    law = mc.conditional_un_distribution(
        DEFAULT, 60, max(2000, _n(2000, scale)), rng=stream(seed, 7, 1), condition="tau", workers=workers
    )
    tv = mc.restricted_tv(law.masses, asy.durrett_masses(E, 10), 10)
    ok = tv < 0.10
    metrics = {"E_tau": E.value, "tv": tv, "walks": law.n_survivors}
    return CheckResult(7, "law of U_n given no descent", ok, metrics, time.perf_counter() - t0)


def check_explosion(seed: int = 1, scale: float = 1.0, workers: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    cfg = mc.BigJumpConfig()
    surv = mc.harvest_survivors(DEFAULT, 100, max(2000, _n(2000, scale)), stream(seed, 8, 0), cfg=cfg, workers=workers)
    st = mc.explosion_statistics(DEFAULT, 100, surv, cfg, stream(seed, 8, 1))
    ok = st.both >= 0.9
    metrics = {
        "frequency": st.both,
        "early_jump": st.early,
        "explosion": st.explosion,
        "given_big_jump": st.both_given_jump,
        "no_jump_mass": st.none_mass,
    }
    return CheckResult(8, "big jump with explosion", ok, metrics, time.perf_counter() - t0)


def check_flt(seed: int = 1, scale: float = 1.0, workers: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    surv = mc.harvest_survivors(
        DEFAULT, 100, max(2000, _n(2000, scale)), stream(seed, 9), condition="explosion", workers=workers
    )
    rep = mc.flt_suite(DEFAULT, 100, surv)
    ok = (
        rep.n_survivors >= 2000
        and rep.ks_w1[0] < 0.08
        and rep.ks_increment[0] < 0.08
        and rep.ratio_max_dev < 0.05
        and abs(rep.corr_half_one - math.sqrt(0.5)) < 0.1
    )
    metrics = {
        "survivors": rep.n_survivors,
        "ks_w1": rep.ks_w1[0],
        "ks_increment": rep.ks_increment[0],
        "ratio_max_dev": rep.ratio_max_dev,
        "corr": rep.corr_half_one,
    }
    return CheckResult(9, "functional limit statistics", ok, metrics, time.perf_counter() - t0)


def check_negative_part(seed: int = 1, scale: float = 1.0, workers: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    est = asy.negative_part_ratio(DEFAULT, 60, _n(400_000, scale), stream(seed, 10), workers)
    ok = 0.7 <= est.point <= 1.3
    return CheckResult(10, "negative-part ratio", ok, {"ratio": est.point, "stderr": est.stderr}, time.perf_counter() - t0)


def check_baxter(seed: int = 1, scale: float = 1.0, workers: int = 1) -> CheckResult:
    t0 = time.perf_counter()
    rows = asy.baxter_check(DEFAULT, 6, _n(1_000_000, scale), stream(seed, 11), workers)
    zs = [r.z for r in rows]
    ok = max(abs(z) for z in zs) <= 4.0
    return CheckResult(11, "Baxter identity", ok, {"z": [round(z, 3) for z in zs]}, time.perf_counter() - t0)


def check_gamma(seed: int = 1, scale: float = 1.0) -> CheckResult:
    t0 = time.perf_counter()
    fa = asy.empirical_gamma_mean(FRACTIONAL, 25.0, _n(200_000, scale), rng=stream(seed, 12, 1))
    ge = asy.empirical_gamma_mean(DEFAULT, 25.0, _n(200_000, scale), rng=stream(seed, 12, 2))
    ok = (
        abs(fa.indicator.point - 0.25) <= 0.05
        and abs(fa.pgf.point - 0.25) <= 0.05
        and abs(ge.indicator.point) <= 0.02
        and abs(ge.pgf.point) <= 0.02
    )
    metrics = {
        "fa_indicator": fa.indicator.point,
        "fa_pgf": fa.pgf.point,
        "geo_indicator": ge.indicator.point,
        "geo_pgf": ge.pgf.point,
    }
    return CheckResult(12, "gamma recovery", ok, metrics, time.perf_counter() - t0)


def check_gw_oracle(seed: int = 1, scale: float = 1.0) -> CheckResult:
    t0 = time.perf_counter()
    law = OffspringLaw.geometric(0.45)
    fixed = FixedEnvironment(law)
    zs = []
    quenched_err = 0.0
    for n in range(1, 21):
        env = EnvRealization.from_laws([law] * n)
        closed = 1.0 - compose_pgf(env, 0, n, 0.0)
        # linear-fractional iteration of the extinction probability
        q = 0.0
        for _ in range(n):
            q = law.pgf(q)
        quenched_err = max(quenched_err, abs(closed - (1.0 - q)))
        est = mc.estimate_survival_naive(fixed, n, _n(200_000, scale), stream(seed, 13, n))
        zs.append((est.point - closed) / est.stderr)
    K = asy.const_K(fixed, 80, 1000, stream(seed, 13, 0))
    q, series = 0.0, 0.0
    for _ in range(81):
        series += 1.0 - q
        q = law.pgf(q)
    k_err = abs(K.value - series)
    ok = max(abs(z) for z in zs) <= 4.0 and quenched_err <= 1e-12 and k_err <= 1e-8
    metrics = {"max_abs_z": max(abs(z) for z in zs), "closed_form_err": quenched_err, "K_err": k_err}
    return CheckResult(13, "Galton-Watson oracle", ok, metrics, time.perf_counter() - t0)


def check_reproducibility(seed: int = 1, scale: float = 1.0) -> CheckResult:
    from .cli import main

    t0 = time.perf_counter()
    runs = []
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "exp.ini"
        cfg.write_text(
            "[run]\nn = 5, 12\nsamples = 2000\nfull_paths = true\nconstant_samples = 20000\n"
            "env_samples = 5000\nseries_terms = 20\nyaglom_terms = 10\nmin_survivors = 50\n",
            encoding="utf-8",
        )
        codes = []
        for rep in range(2):
            files = {}
            for cmd in ("simulate", "constants", "survival"):
                out = Path(tmp) / cmd
                if out.exists():
                    shutil.rmtree(out)
                codes.append(main([cmd, "--config", str(cfg), "--seed", str(seed), "--out", str(out)]))
                for f in sorted(out.iterdir()):
                    files[f"{cmd}/{f.name}"] = f.read_bytes()
            runs.append(files)
    same = runs[0] == runs[1] and len(runs[0]) > 0
    ok = same and all(c == 0 for c in codes)
    return CheckResult(14, "reproducibility", ok, {"files": len(runs[0]), "identical": same}, time.perf_counter() - t0)


CHECKS: dict[int, Callable[..., CheckResult]] = {
    1: check_formula_equivalence,
    2: check_second_moment,
    3: check_g_bounds,
    4: check_survival_ratio,
    5: check_tau_tail,
    6: check_yaglom_un,
    7: check_durrett,
    8: check_explosion,
    9: check_flt,
    10: check_negative_part,
    11: check_baxter,
    12: check_gamma,
    13: check_gw_oracle,
    14: check_reproducibility,
}

PARALLEL = {4, 5, 6, 7, 8, 9, 10, 11}


def run_checks(numbers=None, seed: int = 1, scale: float = 1.0, workers: int = 1, echo: Optional[Callable] = None):
    results = []
    for k in sorted(numbers or CHECKS):
        fn = CHECKS[k]
        res = fn(seed=seed, scale=scale, workers=workers) if k in PARALLEL else fn(seed=seed, scale=scale)
        results.append(res)
        if echo is not None:
            echo(res.line())
    return results
