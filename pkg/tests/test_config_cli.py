import csv
import json

import numpy as np
import pytest

from bpresim import __version__
from bpresim.cli import main
from bpresim.config import ExperimentConfig
from bpresim.env_models import EnvironmentModel
from bpresim.errors import ConfigError
from bpresim.io import SUMMARY_COLUMNS, _cell, jsonable, summary_rows, write_csv
from bpresim.process_core import simulate_population
from bpresim.streams import stream

SMALL = """\
[model]
family = pareto_geometric
[run]
n = 6, 10
samples = 500
full_paths = true
constant_samples = 5000
env_samples = 2000
series_terms = 15
yaglom_terms = 10
min_survivors = 40
"""


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_defaults_and_overrides():
    cfg = ExperimentConfig()
    assert cfg.n_values == (40, 60, 80) and cfg.model == EnvironmentModel()
    cfg2 = cfg.with_overrides(seed=7, workers=2, out="x", fmt="json")
    assert (cfg2.seed, cfg2.workers, cfg2.directory, cfg2.formats) == (7, 2, "x", ("json",))
    with pytest.raises(ConfigError):
        cfg.with_overrides(workers=0)
    with pytest.raises(ConfigError):
        cfg.with_overrides(seed=2**64)


@pytest.mark.parametrize(
    "text",
    [
        "[run]\nsamplez = 3\n",
        "[extra]\nx = 1\n",
        "[model]\nfamily = pareto_geometric\nbeta = 3\nbogus = 1\n",
        "[run]\nn = forty\n",
        "[run]\ngrid = 0.5, 0.2\n",
        "[output]\nformats = xml\n",
        "[model]\nbeta = 1.5\n",
        "not an ini file",
    ],
)
def test_bad_configs_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(_write(tmp_path, text))


def test_echo_round_trips(tmp_path):
    cfg = ExperimentConfig.from_file(_write(tmp_path, SMALL))
    again = ExperimentConfig.from_sections(cfg.echo())
    assert again == cfg


def test_cell_formatting():
    assert _cell(True) == "1" and _cell(None) == "" and _cell(float("nan")) == ""
    assert _cell(0.1) == "0.1" and _cell(np.int64(3)) == "3"
    assert jsonable({"a": np.float64(np.inf), "b": np.arange(2)}) == {"a": None, "b": [0, 1]}


def test_summary_rows_are_consistent():
    model = EnvironmentModel()
    b = simulate_population(model, 12, 300, stream(1), keep="all", full_environment=True)
    rows = summary_rows(b, model.a)
    assert len(rows) == 300
    for r, s in zip(rows, b.s):
        rec = dict(zip(SUMMARY_COLUMNS, r))
        # M_n ranges over k >= 1, L_n over k >= 0
        assert rec["L_n"] <= min(0.0, s[1:].min()) and rec["M_n"] == s[1:].max()
        assert s[rec["tau_n"]] == rec["L_n"]
        if rec["U_n"] is None:
            assert rec["N_Un"] is None


def test_write_csv(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ("a", "b"), [(1, 0.5), (None, float("inf"))])
    assert p.read_text() == "a,b\n1,0.5\n,\n"


def test_exit_codes(tmp_path):
    bad = _write(tmp_path, "[run]\nunknown = 1\n", "bad.ini")
    assert main(["simulate", "--config", str(bad)]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 1
    assert main(["nonsense"]) == 1
    assert main(["simulate", "--workers", "0"]) == 1
    assert main(["validate", "--criteria", "99"]) == 1
    assert main(["--version"]) == 0


def test_runtime_error_exit_code(tmp_path, monkeypatch):
    import bpresim.cli as cli

    def boom(cfg):
        raise RuntimeError("synthetic failure")

    monkeypatch.setitem(cli.HANDLERS, "simulate", boom)
    assert main(["simulate", "--out", str(tmp_path)]) == 3


def test_simulate_outputs(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--seed", "5", "--out", str(out)]) == 0
    manifest = json.loads((out / "simulate.json").read_text())
    assert manifest["seed"] == 5 and manifest["version"] == __version__ and manifest["workers"] == 1
    assert manifest["config"]["run"]["samples"] == "500"
    with open(out / "summary_n10.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 500 and tuple(rows[0]) == SUMMARY_COLUMNS
    survivors = sum(r["survived"] == "1" for r in rows)
    assert survivors == manifest["runs"][1]["survivors"]
    with open(out / "paths_n6.csv") as fh:
        paths = list(csv.DictReader(fh))
    assert len(paths) == 500 * 7


def test_header_only_and_empty_grid(tmp_path):
    cfg = _write(tmp_path, "[run]\nsamples = 0\nn = 5\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "summary_n5.csv").read_text() == ",".join(SUMMARY_COLUMNS) + "\n"
    empty = _write(tmp_path, "[run]\nn =\n", "empty.ini")
    out2 = tmp_path / "e"
    assert main(["flt", "--config", str(empty), "--out", str(out2)]) == 0
    assert json.loads((out2 / "flt.json").read_text())["runs"] == []


def test_json_format_only(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "j"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--format", "json"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["simulate.json"]
    assert len(json.loads((out / "simulate.json").read_text())["runs"][0]["summary"]) == 500


@pytest.mark.parametrize("command", ["simulate", "constants", "survival", "unlaw", "flt"])
def test_commands_rerun_byte_identical(tmp_path, command):
    cfg = _write(tmp_path, SMALL.replace("n = 6, 10", "n = 12"))
    out = tmp_path / command

    def run():
        assert main([command, "--config", str(cfg), "--seed", "11", "--out", str(out)]) == 0
        return {p.name: p.read_bytes() for p in sorted(out.iterdir())}

    first = run()
    assert first == run()


def test_results_do_not_depend_on_workers(tmp_path):
    cfg = _write(tmp_path, SMALL)
    data = []
    for w in (1, 2):
        out = tmp_path / f"w{w}"
        assert main(["simulate", "--config", str(cfg), "--workers", str(w), "--out", str(out)]) == 0
        data.append((out / "summary_n10.csv").read_bytes())
    assert data[0] == data[1]
