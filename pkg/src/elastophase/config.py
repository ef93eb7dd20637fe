"""Experiment configuration: JSON schema, defaults and object builders."""

from __future__ import annotations

import copy
import json

import jsonschema
import numpy as np

from .fields import Grid, boundary_map
from .interfacial import PhasePartition
from .mm1d import Scenario
from .optimize import MinimizeConfig
from .phases import FAMILIES, PhaseSystem
from .stored_energy import StoredEnergySpec

CONFIG_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_matrix2 = {
    "type": "array", "minItems": 2, "maxItems": 2,
    "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": _num},
}


def _section(props, required=()):
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": list(required)}


SCHEMA = _section({
    "version": {"const": CONFIG_VERSION},
    "phases": _section({
        "family": {"enum": sorted(FAMILIES)},
        "wells": {"type": "array", "minItems": 2,
                  "items": {"type": "array", "minItems": 1, "items": _num}},
        "R": _pos,
        "lattice": {"type": ["integer", "null"], "minimum": 3},
        "stiffness": {"type": "array", "items": _pos},
    }, required=("family", "wells", "R")),
    "stored_energy": _section({
        "mu": {"type": "array", "minItems": 2, "items": {"type": "number", "minimum": 0}},
        "prestrain": {"type": "array", "minItems": 2, "items": _matrix2},
        "c1": _pos, "c2": _pos, "c3": _pos,
        "c4": {"oneOf": [{"type": "number", "minimum": 0},
                         {"type": "array", "items": {"type": "number", "minimum": 0}},
                         {"const": "stationary"}]},
        "p": {"type": "number", "minimum": 2},
        "r": {"type": "number", "exclusiveMinimum": 1},
        "q": {"type": "number", "exclusiveMinimum": 1},
    }),
    "grid": _section({
        "nx": {"type": "integer", "minimum": 2}, "ny": {"type": "integer", "minimum": 2},
        "lx": _pos, "ly": _pos,
    }),
    "boundary": _section({
        "family": {"enum": ["identity", "affine", "shear"]},
        "matrix": _matrix2,
        "amount": _num,
    }),
    "minimize": _section({
        "epsilon": _pos,
        "max_outer_iters": _int_pos,
        "inner_iters_y": {"type": "integer", "minimum": 0},
        "inner_iters_z": {"type": "integer", "minimum": 0},
        "initial_step": _pos,
        "backtrack": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "sufficient_decrease": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "max_backtracks": _int_pos,
        "det_floor": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "tol": {"type": "number", "minimum": 0},
        "gradient_tol": {"type": "number", "minimum": 0},
        "stagnation_limit": _int_pos,
        "mass_penalty_weight": {"type": "number", "minimum": 0},
        "mass_target": {"type": ["array", "null"], "items": _num},
        "freeze_y": {"type": "boolean"},
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "init_pattern": {"enum": ["stripes", "random", "uniform", "file"]},
        "init_file": {"type": "string"},
        "noise": {"type": "number", "minimum": 0},
    }),
    "sweep": _section({
        "epsilons": {"type": "array", "minItems": 1, "items": _pos},
        "scenario": {"enum": ["straight-interface", "two-phase-elastic", "single-phase", "custom"]},
        "restarts": _int_pos,
        "track_liminf": {"type": "boolean"},
        "profile_half_width": _pos,
    }),
    "output": _section({
        "directory": {"type": "string"},
        "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
    }),
}, required=("phases",))


DEFAULTS = {
    "version": CONFIG_VERSION,
    "phases": {"family": "double-well", "wells": [[1.0], [0.0]], "R": 1.5, "lattice": None},
    "stored_energy": {
        "mu": [1.0, 1.0],
        "prestrain": [[[1.0, 0.0], [0.0, 1.0]], [[1.2, 0.0], [0.0, 1.0 / 1.2]]],
        "c1": 0.1, "c2": 0.5, "c3": 0.5, "c4": 0.0, "p": 4.0, "r": 2.0, "q": 2.0,
    },
    "grid": {"nx": 32, "ny": 32, "lx": 1.0, "ly": 1.0},
    "boundary": {"family": "identity"},
    "minimize": {"epsilon": 0.1, "max_outer_iters": 100, "init_pattern": "stripes", "noise": 0.05},
    "sweep": {"epsilons": [0.2, 0.1, 0.05, 0.025], "scenario": "two-phase-elastic",
              "restarts": 3, "track_liminf": False},
    "output": {"directory": "results", "formats": ["csv", "json"]},
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return resolve_config(raw, source=str(path))


def resolve_config(raw: dict, source: str = "<config>") -> dict:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "(root)"
            lines.append(f"{source}: field {where}: {e.message}")
        raise ConfigError("\n".join(lines))
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if isinstance(value, dict):
            if key == "phases":
                cfg[key] = {"lattice": None}
            cfg[key].update(copy.deepcopy(value))
        else:
            cfg[key] = value
    try:
        _cross_checks(cfg)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def _cross_checks(cfg):
    wells = cfg["phases"]["wells"]
    h = len(wells[0])
    if any(len(w) != h for w in wells):
        raise ValueError("field phases/wells: all wells need the same dimension")
    se = cfg["stored_energy"]
    if len(se["mu"]) != h + 1 or len(se["prestrain"]) != h + 1:
        raise ValueError(f"field stored_energy: mixture over h={h} needs {h + 1} phase energies")
    if isinstance(se.get("c4"), list) and len(se["c4"]) != h + 1:
        raise ValueError("field stored_energy/c4: one value per phase energy")
    if cfg["boundary"]["family"] == "affine" and "matrix" not in cfg["boundary"]:
        raise ValueError("field boundary/matrix: required for the affine family")


def build_phase_system(cfg) -> PhaseSystem:
    ph = cfg["phases"]
    kwargs = {}
    if "stiffness" in ph:
        kwargs["stiffness"] = ph["stiffness"]
    return PhaseSystem.from_family(ph["family"], ph["wells"], ph["R"], ph.get("lattice"), **kwargs)


def build_stored_energy(cfg) -> StoredEnergySpec:
    se = dict(cfg["stored_energy"])
    if se.get("c4") == "stationary":
        se.pop("c4")
        return StoredEnergySpec.stationary(**se)
    return StoredEnergySpec(**se)


def build_grid(cfg) -> Grid:
    return Grid(**cfg["grid"])


def build_boundary(cfg):
    b = cfg["boundary"]
    return boundary_map(b["family"], b.get("matrix"), b.get("amount", 0.0))


def build_minimize(cfg, seed: int = 0) -> MinimizeConfig:
    fields = {k: v for k, v in cfg["minimize"].items()
              if k not in ("init_pattern", "init_file", "noise")}
    return MinimizeConfig(seed=seed, **fields)


def build_scenario(cfg) -> Scenario:
    """Scenario for the sweep harness.

    ``straight-interface`` freezes the identity deformation and fixes a
    vertical two-phase partition; ``single-phase`` fixes a one-label
    partition; the others minimize in both fields.
    """
    sys = build_phase_system(cfg)
    spec = build_stored_energy(cfg)
    grid = build_grid(cfg)
    name = cfg["sweep"]["scenario"]
    pattern = cfg["minimize"].get("init_pattern", "stripes")
    if name == "straight-interface":
        part = PhasePartition.stripes(grid, sys.m, 2)
        return Scenario(name, sys, spec, grid, boundary_map("identity"), "partition", True, part)
    if name == "single-phase":
        part = PhasePartition(np.zeros(grid.cell_shape, dtype=int), sys.m)
        return Scenario(name, sys, spec, grid, build_boundary(cfg), "partition",
                        bool(cfg["minimize"].get("freeze_y", False)), part)
    return Scenario(name, sys, spec, grid, build_boundary(cfg), pattern,
                    bool(cfg["minimize"].get("freeze_y", False)))
