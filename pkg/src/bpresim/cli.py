"""Command-line orchestration: ``bpresim <command> [--config PATH] ...``.

Every command writes its reports into the output directory.  Reports carry
the full configuration echo, seed, worker count and package version, and
contain no timing information, so reruns are byte-identical.  Wall time goes
to stderr.
"""

from __future__ import annotations

import argparse
import sys
import time
import traceback
from pathlib import Path


from . import __version__
from . import asymptotics as asy
from . import montecarlo as mc
from .config import ExperimentConfig
from .errors import ConfigError
from .io import PATH_COLUMNS, SUMMARY_COLUMNS, path_rows, report_header, summary_rows, write_csv, write_json
from .process_core import simulate_population
from .streams import run_tasks, shard_sizes, stream

EXIT_OK, EXIT_CONFIG, EXIT_ACCEPTANCE, EXIT_RUNTIME = 0, 1, 2, 3

# stream tags, one per command
TAGS = {"simulate": 1, "constants": 2, "survival": 3, "unlaw": 4, "flt": 5}

COMMANDS = ("simulate", "constants", "survival", "unlaw", "flt", "validate")


def _out(cfg: ExperimentConfig) -> Path:
    path = cfg.output_dir()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _report(cfg, command, body, stem=None):
    out = _out(cfg)
    payload = dict(report_header(cfg, command))
    payload.update(body)
    write_json(out / f"{stem or command}.json", payload)


def _table(cfg, stem, columns, rows):
    if "csv" in cfg.formats:
        write_csv(_out(cfg) / f"{stem}.csv", columns, rows)


# ---------------------------------------------------------------------------
# simulate


def _simulate_task(rng, size, model, n):
    return simulate_population(model, n, size, rng, keep="all", full_environment=True)


def cmd_simulate(cfg: ExperimentConfig) -> int:
    manifest = []
    for n in cfg.n_values:
        sizes = shard_sizes(cfg.samples, mc.SHARD)
        batches = run_tasks(_simulate_task, [(s, cfg.model, n) for s in sizes], stream(cfg.seed, TAGS["simulate"], n), cfg.workers)
        rows, paths, first = [], [], 0
        survived = capped = 0
        for size, b in zip(sizes, batches):
            rows.extend(summary_rows(b, cfg.model.a, first))
            if cfg.full_paths:
                paths.extend(path_rows(b, first))
            survived += int(b.survived.sum())
            capped += int(b.capped.sum())
            first += size
        _table(cfg, f"summary_n{n}", SUMMARY_COLUMNS, rows)
        if cfg.full_paths:
            _table(cfg, f"paths_n{n}", PATH_COLUMNS, paths)
        entry = {"n": n, "paths": cfg.samples, "survivors": survived, "capped": capped}
        if "json" in cfg.formats:
            entry["summary"] = [dict(zip(SUMMARY_COLUMNS, r)) for r in rows]
        manifest.append(entry)
    _report(cfg, "simulate", {"runs": manifest})
    return EXIT_OK


# ---------------------------------------------------------------------------
# constants


def _constants(cfg, workers=None):
    w = cfg.workers if workers is None else workers
    base = TAGS["constants"]
    samples = cfg.scaled(cfg.constant_samples)
    return [
        asy.const_K(cfg.model, cfg.yaglom_terms, cfg.scaled(cfg.env_samples), stream(cfg.seed, base, 1), w),
        asy.const_D(cfg.model, cfg.series_terms, samples, stream(cfg.seed, base, 2), w),
        asy.const_E_tau(cfg.model, samples, rng=stream(cfg.seed, base, 3), workers=w),
        asy.const_K1(cfg.model, cfg.series_terms, samples, stream(cfg.seed, base, 4), w),
    ]


def cmd_constants(cfg: ExperimentConfig) -> int:
    reports = _constants(cfg)
    cols = ("name", "value", "truncation_index", "truncation_bound", "mc_stderr")
    _table(cfg, "constants", cols, [tuple(r.to_dict()[c] for c in cols) for r in reports])
    body = {"constants": {r.name: r.to_dict() for r in reports}}
    body["model"] = {"a": cfg.model.a, "sigma2": cfg.model.sigma2}
    gam = asy.empirical_gamma_mean(cfg.model, cfg.gamma_x, cfg.scaled(200_000), rng=stream(cfg.seed, TAGS["constants"], 5))
    body["gamma_recovery"] = {
        "x": gam.x,
        "indicator": gam.indicator.to_dict(),
        "pgf": gam.pgf.to_dict(),
        "target": gam.target,
    }
    _report(cfg, "constants", body)
    return EXIT_OK


# ---------------------------------------------------------------------------
# survival


def cmd_survival(cfg: ExperimentConfig) -> int:
    if cfg.samples < 1:
        raise ConfigError("survival needs samples >= 1")
    base = TAGS["survival"]
    K = asy.const_K(cfg.model, cfg.yaglom_terms, cfg.scaled(cfg.env_samples), stream(cfg.seed, base, 0), cfg.workers)
    D = asy.const_D(cfg.model, cfg.series_terms, cfg.scaled(cfg.constant_samples), stream(cfg.seed, base, 1), cfg.workers)
    rows, table = [], []
    for n in cfg.n_values:
        res = mc.estimate_survival_bigjump(cfg.model, n, cfg.samples, cfg.bigjump, stream(cfg.seed, base, 2, n), cfg.workers)
        tau = mc.estimate_tau_tail(cfg.model, n, cfg.samples, cfg.bigjump, stream(cfg.seed, base, 3, n), cfg.workers)
        pred = asy.theoretical_survival(cfg.model, K, n)
        pred_tau = asy.tau_tail_law(cfg.model, D, n)
        row = {
            "n": n,
            "survival": res.estimate.point,
            "survival_stderr": res.estimate.stderr,
            "jump_part": res.jump_part.point,
            "remainder": res.remainder.point,
            "remainder_bound": res.remainder_bound.point,
            "prediction": pred,
            "ratio": res.estimate.point / pred,
            "tau_tail": tau.estimate.point,
            "tau_tail_stderr": tau.estimate.stderr,
            "tau_prediction": pred_tau,
            "tau_ratio": tau.estimate.point / pred_tau,
        }
        rows.append(row)
        table.append(tuple(row.values()))
    dev = [abs(r["ratio"] - 1.0) for r in rows]
    monotone = all(b <= a + 0.05 for a, b in zip(dev, dev[1:]))
    if rows:
        _table(cfg, "survival", tuple(rows[0].keys()), table)
    _report(cfg, "survival", {"K": K.to_dict(), "D": D.to_dict(), "rows": rows, "ratio_deviation_nonincreasing": monotone})
    return EXIT_OK


# ---------------------------------------------------------------------------
# law of U_n


def cmd_unlaw(cfg: ExperimentConfig) -> int:
    base = TAGS["unlaw"]
    K = asy.const_K(cfg.model, cfg.yaglom_terms, cfg.scaled(cfg.env_samples), stream(cfg.seed, base, 0), cfg.workers)
    E = asy.const_E_tau(cfg.model, cfg.scaled(cfg.constant_samples), rng=stream(cfg.seed, base, 1), workers=cfg.workers)
    j_hi = min(10, cfg.yaglom_terms)
    runs, table = [], []
    for n in cfg.n_values:
        for cond, theory in (("survival", asy.yaglom_masses(K, j_hi)[0]), ("tau", asy.durrett_masses(E, j_hi))):
            tag = 2 if cond == "survival" else 3
            law = mc.conditional_un_distribution(
                cfg.model, n, cfg.min_survivors, cfg.bigjump, stream(cfg.seed, base, tag, n), condition=cond, workers=cfg.workers
            )
            emp = law.restricted(j_hi)
            tv = mc.restricted_tv(law.masses, theory, j_hi)
            for j in range(1, j_hi + 1):
                table.append((n, cond, j, float(emp[j - 1]) if j <= emp.size else None, float(theory[j - 1])))
            d = law.to_dict()
            d.update({"tv_restricted": tv, "j_hi": j_hi, "theory": theory})
            runs.append(d)
    _table(cfg, "unlaw", ("n", "condition", "j", "empirical", "limit"), table)
    _report(cfg, "unlaw", {"K": K.to_dict(), "E_tau": E.to_dict(), "runs": runs})
    return EXIT_OK


# ---------------------------------------------------------------------------
# functional limit


def cmd_flt(cfg: ExperimentConfig) -> int:
    base = TAGS["flt"]
    runs, table = [], []
    for n in cfg.n_values:
        cfg.bigjump.check([n])
        surv = mc.harvest_survivors(cfg.model, n, cfg.min_survivors, stream(cfg.seed, base, 1, n), cfg=cfg.bigjump, workers=cfg.workers)
        expl = mc.explosion_statistics(cfg.model, n, surv, cfg.bigjump, stream(cfg.seed, base, 2, n))
        cond = mc.harvest_survivors(
            cfg.model, n, cfg.min_survivors, stream(cfg.seed, base, 3, n), cfg=cfg.bigjump, condition="explosion", workers=cfg.workers
        )
        entry = {"n": n, "explosion": expl.to_dict()}
        if cfg.grid:
            rep = mc.flt_suite(cfg.model, n, cond, cfg.grid, cfg.bigjump)
            entry["flt"] = rep.to_dict()
            smp = rep.sample
            for i in range(smp.ratio.shape[0]):
                for k, t in enumerate(smp.grid):
                    table.append((n, i, float(t), float(smp.ratio[i, k]), float(smp.clt[i, k]), int(smp.u_n[i]), bool(smp.capped[i])))
        runs.append(entry)
    _table(cfg, "flt_sample", ("n", "survivor", "t", "R", "W", "U_n", "capped"), table)
    _report(cfg, "flt", {"runs": runs})
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate


def cmd_validate(cfg: ExperimentConfig, criteria=None) -> int:
    from .validate import run_checks

    results = run_checks(criteria, seed=cfg.seed, scale=cfg.scale, workers=cfg.workers, echo=lambda s: print(s, file=sys.stderr))
    rows = [(r.number, r.title, r.passed) for r in results]
    _table(cfg, "validate", ("criterion", "title", "passed"), rows)
    _report(cfg, "validate", {"results": [r.to_dict() for r in results], "all_passed": all(r.passed for r in results)})
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


HANDLERS = {
    "simulate": cmd_simulate,
    "constants": cmd_constants,
    "survival": cmd_survival,
    "unlaw": cmd_unlaw,
    "flt": cmd_flt,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bpresim", description="Subcritical branching processes in heavy-tailed random environments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI experiment file")
        p.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--format", choices=("csv", "json"), help="restrict tabular output to one format")
        if name == "validate":
            p.add_argument("--criteria", type=int, nargs="+", help="run only these criteria")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help/--version and 2 for usage errors
        return EXIT_OK if not exc.code else EXIT_CONFIG
    try:
        cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
        cfg = cfg.with_overrides(args.seed, args.workers, args.out, args.format)
        if args.command == "validate" and args.criteria:
            from .validate import CHECKS

            bad = [c for c in args.criteria if c not in CHECKS]
            if bad:
                raise ConfigError(f"unknown criteria: {bad}")
        t0 = time.perf_counter()
        if args.command == "validate":
            code = cmd_validate(cfg, args.criteria)
        else:
            code = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"bpresim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure maps to the runtime exit code
        traceback.print_exc(file=sys.stderr)
        print(f"bpresim: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"bpresim {args.command}: wall time {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
