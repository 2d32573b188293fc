"""CSV and JSON emission with deterministic formatting.

Floats are written with ``repr`` so that identical inputs produce identical
bytes; NaN and infinities become empty CSV cells and JSON ``null``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .process_core import PathBatch, walk_functionals_batch

PATH_COLUMNS = ("run_id", "k", "Z_k", "S_k")
SUMMARY_COLUMNS = ("run_id", "n", "survived", "U_n", "tau_n", "L_n", "M_n", "N_Un", "capped")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def _count(log_value: float, capped: bool):
    """A population count: exact integer when representable, else a float."""
    if not math.isfinite(log_value):
        return 0
    if not capped and log_value < 52 * math.log(2):
        return int(round(math.exp(log_value)))
    return math.exp(log_value) if log_value < 709 else math.inf


def jsonable(obj):
    """Recursively convert numpy types and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, payload) -> None:
    text = json.dumps(jsonable(payload), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def report_header(config, command: str) -> dict:
    """Metadata embedded in every report."""
    return {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "workers": config.workers,
        "config": config.echo(),
    }


def summary_rows(batch: PathBatch, a: float, first_id: int = 0):
    """Path-summary rows for the kept paths of a batch with full environments."""
    if batch.ids.size == 0:
        return []
    fun = walk_functionals_batch(batch.s, a, batch.x)
    rows = []
    for r, pid in enumerate(batch.ids):
        u = int(batch.u_n[pid])
        lnb = batch.log_n_big[pid]
        capped = bool(batch.capped[pid])
        rows.append(
            (
                first_id + int(pid),
                batch.n,
                bool(batch.survived[pid]),
                u if u > 0 else None,
                int(fun["tau_n"][r]),
                float(fun["L_n"][r]),
                float(fun["M_n"][r]),
                None if np.isnan(lnb) else _count(float(lnb), True),
                capped,
            )
        )
    return rows


def _population(v: float):
    return int(v) if v < 2.0**53 else float(v)


def path_rows(batch: PathBatch, first_id: int = 0):
    s = batch.s
    for r, pid in enumerate(batch.ids):
        for k in range(batch.n + 1):
            yield first_id + int(pid), k, _population(float(batch.z[r, k])), float(s[r, k])
