"""Flat INI experiment configuration with validated keys.

Three sections are recognised: ``[model]``, ``[run]`` and ``[output]``.
Unknown sections or keys are rejected before any computation starts.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

from .env_models import EnvironmentModel
from .errors import ConfigError
from .montecarlo import DEFAULT_GRID, BigJumpConfig

MODEL_KEYS = ("family", "beta", "x_m", "shift_c", "gamma_min", "gamma_max")

RUN_DEFAULTS = {
    "n": "40, 60, 80",
    "samples": "100000",
    "min_survivors": "2000",
    "j_max": "n",
    "grid": ", ".join(f"{t:g}" for t in DEFAULT_GRID),
    "seed": "1",
    "workers": "1",
    "series_terms": "200",
    "yaglom_terms": "60",
    "constant_samples": "1000000",
    "env_samples": "200000",
    "gamma_x": "25",
    "h_scale": "1",
    "delta_scale": "3",
    "full_paths": "false",
    "scale": "1",
}

OUTPUT_DEFAULTS = {"directory": "out", "formats": "csv, json"}
FORMATS = ("csv", "json")


def _int(key, raw, low=None):
    try:
        v = int(str(raw).strip())
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw!r}") from None
    if low is not None and v < low:
        raise ConfigError(f"{key} must be at least {low}")
    return v


def _float(key, raw):
    try:
        return float(str(raw).strip())
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw!r}") from None


def _list(raw) -> list[str]:
    return [p.strip() for p in str(raw).replace(";", ",").split(",") if p.strip()]


def _bool(key, raw) -> bool:
    v = str(raw).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} must be a boolean, got {raw!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    model: EnvironmentModel = field(default_factory=EnvironmentModel)
    n_values: tuple[int, ...] = (40, 60, 80)
    samples: int = 100_000
    min_survivors: int = 2000
    j_max: Optional[int] = None
    grid: tuple[float, ...] = DEFAULT_GRID
    seed: int = 1
    workers: int = 1
    series_terms: int = 200
    yaglom_terms: int = 60
    constant_samples: int = 1_000_000
    env_samples: int = 200_000
    gamma_x: float = 25.0
    h_scale: float = 1.0
    delta_scale: float = 3.0
    full_paths: bool = False
    scale: float = 1.0
    directory: str = "out"
    formats: tuple[str, ...] = FORMATS

    @property
    def bigjump(self) -> BigJumpConfig:
        return BigJumpConfig(j_max=self.j_max, h_scale=self.h_scale, delta_scale=self.delta_scale)

    def scaled(self, count: int) -> int:
        return max(1, int(round(count * self.scale))) if count else 0

    @classmethod
    def from_sections(cls, sections: Mapping[str, Mapping[str, str]]) -> "ExperimentConfig":
        unknown = set(sections) - {"model", "run", "output"}
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        model_sec = dict(sections.get("model", {}))
        model = EnvironmentModel.from_config(model_sec) if model_sec else EnvironmentModel()
        run = dict(RUN_DEFAULTS)
        for k, v in sections.get("run", {}).items():
            if k not in RUN_DEFAULTS:
                raise ConfigError(f"unknown key in [run]: {k}")
            run[k] = v
        out = dict(OUTPUT_DEFAULTS)
        for k, v in sections.get("output", {}).items():
            if k not in OUTPUT_DEFAULTS:
                raise ConfigError(f"unknown key in [output]: {k}")
            out[k] = v

        n_values = tuple(_int("n", v, 1) for v in _list(run["n"]))
        grid = tuple(_float("grid", v) for v in _list(run["grid"]))
        if any(not 0.0 <= t <= 1.0 for t in grid) or list(grid) != sorted(grid):
            raise ConfigError("grid must be sorted values in [0, 1]")
        j_raw = str(run["j_max"]).strip().lower()
        j_max = None if j_raw in ("n", "", "none") else _int("j_max", j_raw, 1)
        formats = tuple(f.lower() for f in _list(out["formats"]))
        if not formats or any(f not in FORMATS for f in formats):
            raise ConfigError(f"formats must be drawn from {FORMATS}")
        seed = _int("seed", run["seed"], 0)
        if seed >= 2**64:
            raise ConfigError("seed must fit in 64 bits")
        scale = _float("scale", run["scale"])
        if scale <= 0:
            raise ConfigError("scale must be positive")
        return cls(
            model=model,
            n_values=n_values,
            samples=_int("samples", run["samples"], 0),
            min_survivors=_int("min_survivors", run["min_survivors"], 1),
            j_max=j_max,
            grid=grid,
            seed=seed,
            workers=_int("workers", run["workers"], 1),
            series_terms=_int("series_terms", run["series_terms"], 1),
            yaglom_terms=_int("yaglom_terms", run["yaglom_terms"], 0),
            constant_samples=_int("constant_samples", run["constant_samples"], 1),
            env_samples=_int("env_samples", run["env_samples"], 1),
            gamma_x=_float("gamma_x", run["gamma_x"]),
            h_scale=_float("h_scale", run["h_scale"]),
            delta_scale=_float("delta_scale", run["delta_scale"]),
            full_paths=_bool("full_paths", run["full_paths"]),
            scale=scale,
            directory=str(out["directory"]).strip(),
            formats=formats,
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from None
        return cls.from_sections({s: dict(parser.items(s)) for s in parser.sections()})

    def with_overrides(self, seed=None, workers=None, out=None, fmt=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            cfg = replace(cfg, seed=int(seed))
        if workers is not None:
            if workers < 1:
                raise ConfigError("workers must be at least 1")
            cfg = replace(cfg, workers=int(workers))
        if out is not None:
            cfg = replace(cfg, directory=str(out))
        if fmt is not None:
            if fmt not in FORMATS:
                raise ConfigError(f"format must be one of {FORMATS}")
            cfg = replace(cfg, formats=(fmt,))
        return cfg

    def echo(self) -> dict:
        """Every setting as strings, grouped like the INI file."""
        return {
            "model": self.model.to_config(),
            "run": {
                "n": ", ".join(str(v) for v in self.n_values),
                "samples": str(self.samples),
                "min_survivors": str(self.min_survivors),
                "j_max": "n" if self.j_max is None else str(self.j_max),
                "grid": ", ".join(f"{t:g}" for t in self.grid),
                "seed": str(self.seed),
                "workers": str(self.workers),
                "series_terms": str(self.series_terms),
                "yaglom_terms": str(self.yaglom_terms),
                "constant_samples": str(self.constant_samples),
                "env_samples": str(self.env_samples),
                "gamma_x": repr(self.gamma_x),
                "h_scale": repr(self.h_scale),
                "delta_scale": repr(self.delta_scale),
                "full_paths": str(self.full_paths).lower(),
                "scale": repr(self.scale),
            },
            "output": {"directory": self.directory, "formats": ", ".join(self.formats)},
        }

    def output_dir(self) -> Path:
        return Path(self.directory)
