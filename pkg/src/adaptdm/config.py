"""Experiment configuration files.

Configs are YAML mappings. Every key is optional except where noted and is
validated with its dotted path in error messages; unknown keys are errors.
See README.md for the full key reference.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .control import LoopConfig
from .plant import ActuatorLayout, DriftConfig, PlantConfig, block_actuators
from .zernike import ApertureGrid, mode_index

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "dump_config"]

#: dense RLS stores an (n*m)^2 matrix; refuse anything larger than this n*m
DENSE_MAX_PARAMETERS = 4096


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


_REQUIRED = object()

# key -> (type, default); type is a tuple of accepted python types or a nested schema dict
SCHEMA: dict[str, Any] = {
    "seed": ((int,), 0),
    "output_dir": ((str,), "runs/default"),
    "n_modes": ((int,), 66),
    "s_probes": ((int,), 200),
    "theta_assumed": ((float,), 1.742),
    "plots": ((bool,), False),
    "grid": {
        "width_px": ((int,), 64),
        "height_px": ((int,), 64),
        "diameter_px": ((float,), 62.0),
        "pixel_pitch_um": ((float,), 75.0),
        "center_px": ((list, type(None)), None),
    },
    "plant": {
        "layout": {
            "grid_rows": ((int,), 12),
            "grid_cols": ((int,), 12),
            "inactive": ((str, list), "corners"),
            "pitch_um": ((float,), 400.0),
        },
        "theta_true": ((float,), 1.742),
        "stroke_um": ((float,), 2.0),
        "influence_sigma_um": ((float, type(None)), None),
        "coupling_gamma": ((float,), 0.0),
        "noise_sigma_um": ((float,), 5e-3),
        "seed": ((int, type(None)), None),
        "drift": ((dict, type(None)), None),
    },
    "loop": {
        "iterations": ((int,), 30),
        "beta": ((float,), 0.98),
        "delta": ((float,), 1e-2),
        "estimator_form": ((str,), "factored"),
        "crop_fraction": ((float,), 0.85),
        "record_checkpoints": ((bool,), False),
        "metric_surface": ((str,), "measured"),
        "bvls_tol": ((float,), 1e-10),
        "bvls_max_iter": ((int, type(None)), None),
        "warm_start": ((bool,), True),
    },
    "target": {
        "mode": ((str,), "Z4^2"),
        "pv_um": ((float,), 1.1829),
        "piston_um": ((float, type(None)), None),
    },
}

DRIFT_SCHEMA: dict[str, Any] = {
    "onset": ((int,), _REQUIRED),
    "gain": ((float,), _REQUIRED),
    "actuators": ((list, type(None)), None),
    "block": ((dict, type(None)), None),
}


def _coerce(value, types, path):
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{path}: expected {_type_names(types)}, got a boolean")
    if not isinstance(value, types):
        raise ConfigError(f"{path}: expected {_type_names(types)}, got {type(value).__name__}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    return value


def _type_names(types):
    return " or ".join("null" if t is type(None) else t.__name__ for t in types)


def _normalize(data, schema, prefix=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or '<root>'}: expected a mapping")
    unknown = sorted(set(data) - set(schema))
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}: unknown key")
    out = {}
    for key, spec in schema.items():
        path = f"{prefix}{key}"
        if isinstance(spec, dict):
            out[key] = _normalize(data.get(key), spec, path + ".")
            continue
        types, default = spec
        if key not in data:
            if default is _REQUIRED:
                raise ConfigError(f"{path}: required key missing")
            out[key] = copy.deepcopy(default)
        else:
            out[key] = _coerce(data[key], types, path)
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment configuration.

    ``data`` is the normalized mapping (defaults filled in); the other
    attributes are the objects built from it.
    """

    data: dict
    grid: ApertureGrid
    plant: PlantConfig
    loop: LoopConfig

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def n_modes(self) -> int:
        return self.data["n_modes"]

    @property
    def s_probes(self) -> int:
        return self.data["s_probes"]

    @property
    def theta_assumed(self) -> float:
        return self.data["theta_assumed"]

    @property
    def target(self) -> dict:
        return self.data["target"]

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    @property
    def plots(self) -> bool:
        return self.data["plots"]

    def with_overrides(self, **dotted) -> "ExperimentConfig":
        """Copy with keys replaced, e.g. ``with_overrides(**{"loop.beta": 1.0})``."""
        data = copy.deepcopy(self.data)
        for key, value in dotted.items():
            node = data
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"{key}: unknown key")
            node[leaf] = value
        return parse_config(data)


def _build_layout(d, path) -> ActuatorLayout:
    inactive = d["inactive"]
    if isinstance(inactive, str):
        if inactive != "corners":
            raise ConfigError(f"{path}.inactive: expected 'corners' or a list of [row, col]")
        inactive_set = None
    else:
        try:
            inactive_set = frozenset((int(r), int(c)) for r, c in inactive)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}.inactive: expected a list of [row, col] pairs") from None
    try:
        return ActuatorLayout(d["grid_rows"], d["grid_cols"], inactive_set, d["pitch_um"])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _build_drift(d, layout, path) -> DriftConfig | None:
    if d is None:
        return None
    d = _normalize(d, DRIFT_SCHEMA, path + ".")
    if (d["actuators"] is None) == (d["block"] is None):
        raise ConfigError(f"{path}: give exactly one of 'actuators' or 'block'")
    if d["block"] is not None:
        block = d["block"]
        try:
            rows = tuple(int(v) for v in block["rows"])
            cols = tuple(int(v) for v in block["cols"])
            assert len(rows) == 2 and len(cols) == 2
        except (KeyError, TypeError, ValueError, AssertionError):
            raise ConfigError(f"{path}.block: expected {{rows: [r0, r1], cols: [c0, c1]}}") from None
        actuators = block_actuators(layout, rows, cols)
        if not actuators:
            raise ConfigError(f"{path}.block: selects no active actuators")
    else:
        actuators = tuple(int(i) for i in d["actuators"])
    try:
        return DriftConfig(d["onset"], d["gain"], actuators)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config mapping and build the experiment objects."""
    data = _normalize(raw, SCHEMA)
    if data["plant"]["drift"] is not None:
        drift_norm = _normalize(data["plant"]["drift"], DRIFT_SCHEMA, "plant.drift.")
        data["plant"]["drift"] = {k: v for k, v in drift_norm.items() if v is not None}

    g = data["grid"]
    try:
        grid = ApertureGrid(
            g["width_px"],
            g["height_px"],
            g["diameter_px"],
            g["pixel_pitch_um"],
            None if g["center_px"] is None else tuple(g["center_px"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"grid: {exc}") from None

    p = data["plant"]
    layout = _build_layout(p["layout"], "plant.layout")
    drift = _build_drift(p["drift"], layout, "plant.drift")
    try:
        plant = PlantConfig(
            layout=layout,
            theta_true=p["theta_true"],
            stroke_um=p["stroke_um"],
            influence_sigma_um=p["influence_sigma_um"],
            coupling_gamma=p["coupling_gamma"],
            noise_sigma_um=p["noise_sigma_um"],
            drift=drift,
            seed=data["seed"] if p["seed"] is None else p["seed"],
        )
    except ValueError as exc:
        raise ConfigError(f"plant: {exc}") from None

    try:
        loop = LoopConfig(**data["loop"])
    except ValueError as exc:
        raise ConfigError(f"loop: {exc}") from None

    if data["n_modes"] < 1:
        raise ConfigError("n_modes: must be >= 1")
    if data["n_modes"] > grid.n_pixels:
        raise ConfigError(f"n_modes: exceeds the {grid.n_pixels} aperture pixels")
    if data["s_probes"] < layout.m:
        raise ConfigError(
            f"s_probes: must be >= the number of actuators m = {layout.m} "
            f"(s >= m rule for the batch estimate), got {data['s_probes']}"
        )
    if not data["theta_assumed"] > 0:
        raise ConfigError("theta_assumed: must be positive")
    if loop.estimator_form == "dense" and data["n_modes"] * layout.m > DENSE_MAX_PARAMETERS:
        raise ConfigError(
            f"loop.estimator_form: dense RLS needs an (n*m)^2 matrix; n*m = "
            f"{data['n_modes'] * layout.m} exceeds {DENSE_MAX_PARAMETERS}, use 'factored'"
        )
    t = data["target"]
    try:
        j = mode_index(t["mode"])
    except ValueError as exc:
        raise ConfigError(f"target.mode: {exc}") from None
    if j >= data["n_modes"]:
        raise ConfigError(f"target.mode: {t['mode']} is Noll {j + 1}, beyond n_modes = {data['n_modes']}")
    if j == 0:
        raise ConfigError("target.mode: piston has no shape")
    if not t["pv_um"] > 0:
        raise ConfigError("target.pv_um: must be positive")
    return ExperimentConfig(data, grid, plant, loop)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"<file>: cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"<file>: {path} is not valid YAML: {exc}") from None
    return parse_config(raw or {})


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.data, sort_keys=False)
