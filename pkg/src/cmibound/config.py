"""Experiment configuration files.

Configs are TOML documents with a few top-level keys and one table per
parameter block::

    experiment = "bound-curve"
    seed = 5
    output = "results/bound-curve"

    [problem]
    kind = "linear"
    D = 512

Every block and key is checked against a per-experiment schema; unknown
blocks or keys are errors. Missing keys take documented defaults, and the
normalized result (with defaults filled in) is what reports echo.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .exceptions import ConfigError

__all__ = ["Field", "REQUIRED", "SCHEMAS", "TOP_LEVEL", "load_config", "normalize_config", "describe_schema"]


class _Required:
    def __repr__(self):
        return "REQUIRED"


REQUIRED = _Required()


@dataclass(frozen=True)
class Field:
    """One config key.

    ``type`` is one of ``int``, ``float``, ``str``, ``bool``, ``int_list``,
    ``float_list``, ``float_or_list``, ``p_star`` (``"zero"``, ``"random"`` or a
    list of floats) and ``tuple_list`` (list of ``[m, q, xi, n]`` rows).
    """

    type: str
    default: Any = REQUIRED
    doc: str = ""
    choices: tuple = ()
    minimum: float | None = None


def _problem_block(D: int | Any = REQUIRED) -> dict:
    return {
        "kind": Field("str", "linear", "loss family", ("linear", "strongly_convex", "squared")),
        "D": Field("int", D, "ambient dimension", minimum=1),
        "L": Field("float", 1.0, "Lipschitz constant", minimum=0.0),
        "L_c": Field("float", 1.0, "linear-part constant (strongly_convex)", minimum=0.0),
        "lam": Field("float", 1.0, "curvature (strongly_convex)", minimum=0.0),
        "R": Field("float", 1.0, "hypothesis radius", minimum=0.0),
    }


def _distribution_block() -> dict:
    return {
        "kind": Field("str", "cube_p", "data distribution", ("cube_p", "sphere_uniform")),
        "p_star": Field("p_star", "zero", "cube_p bias: 'zero', 'random' (uniform on [-1,1]^D) or a list"),
    }


def _compressor_block() -> dict:
    return {
        "d": Field("int", 1, "target dimension", minimum=1),
        "c_w": Field("float", 1.0, "clip radius in [1, sqrt(5/4))"),
        "nu": Field("float", 0.4, "dither radius in (0, 1]"),
    }


SCHEMAS: dict[str, dict[str, dict[str, Field]]] = {
    "moments-check": {
        "moments": {
            "D": Field("int", 20, "ambient dimension of the pushforward check", minimum=1),
            "d": Field("int", 4, "projection dimension", minimum=1),
            "samples": Field("int", 10**6, "projection draws", minimum=2),
            "chunks": Field("int", 10, "independently seeded work items", minimum=1),
        },
        "ball": {
            "d": Field("int_list", [1, 2, 5, 20], "ball dimensions"),
            "nu": Field("float", 1.0, "ball radius", minimum=0.0),
            "samples": Field("int", 10**6, "draws per dimension", minimum=2),
            "chunks": Field("int", 10, "work items per dimension", minimum=1),
        },
        "tail": {
            "D": Field("int", 100, "ambient dimension", minimum=1),
            "d": Field("int_list", [1, 10, 100], "projection dimensions"),
            "c_w": Field("float_list", [1.05, 1.1], "clip radii"),
            "samples": Field("int", 10**5, "projection draws per cell", minimum=2),
            "chunks": Field("int", 10, "work items per dimension", minimum=1),
        },
    },
    "bound-curve": {
        "problem": _problem_block(512),
        "distribution": _distribution_block(),
        "compressor": _compressor_block(),
        "budget": {
            "outer": Field("int", 200, "replicas over (super-sample, projection)", minimum=2),
            "inner": Field("int", 10, "draws over (membership, dither) per replica", minimum=1),
        },
        "grid": {"n": Field("int_list", [25, 50, 100, 200, 400], "sample sizes")},
    },
    "counterexample": {
        "problem": _problem_block(64),
        "distribution": _distribution_block(),
        "compressor": _compressor_block(),
        "oracle": {
            "n": Field("int_list", [6, 8, 10, 12], "sample sizes (at most 14)"),
            "projections": Field("int", 5, "projection draws per n", minimum=1),
            "tol": Field("float", 1e-9, "output grouping tolerance", minimum=0.0),
        },
    },
    "sgld-bound": {
        "problem": _problem_block(256),
        "distribution": _distribution_block(),
        "sgld": {
            "n": Field("int", 100, "sample size", minimum=1),
            "replicas": Field("int", 50, "independent replicas", minimum=2),
            "d": Field("int", 8, "subspace dimension", minimum=1),
            "T": Field("int", 200, "steps", minimum=1),
            "b": Field("int", 10, "minibatch size", minimum=1),
            "eta": Field("float_or_list", 0.05, "step sizes"),
            "sigma": Field("float_or_list", 0.05, "SGLD noise scales"),
            "nu": Field("float_or_list", 1e-4, "auxiliary noise scales of the lossy bound"),
            "alpha": Field("float", 1.0, "declared contraction constant"),
            "lipschitz_L": Field("float", 1.0, "Lipschitz constant in the subspace parameter", minimum=0.0),
            "per_step": Field("bool", False, "write a per-step CSV for replica 0"),
        },
        "sgd_mode": {
            "replicas": Field("int", 10, "replicas of the sigma = 0 variant (0 disables)", minimum=0),
            "nu": Field("float_or_list", 0.002, "auxiliary noise scales for sigma = 0"),
        },
    },
    "recall-game": {
        "dummy": {
            "enabled": Field("bool", True, "run the dummy-adversary calibration"),
            "D": Field("int", 4, "dimension of the zero-bias cube the dummy game is played on", minimum=1),
            "alpha": Field("float", 0.0, "probability of answering 0 everywhere"),
            "r_n": Field("float", 0.9, "per-point probability of answering 0"),
            "n": Field("int", 20, "sample size", minimum=1),
            "trials": Field("int", 10**4, "games", minimum=1),
            "chunks": Field("int", 10, "work items", minimum=1),
            "check_trials": Field("int", 4000, "games per feasibility tuple", minimum=1),
            "feasible": Field("tuple_list", [], "(m, q, xi, n) rows expected feasible"),
            "infeasible": Field("tuple_list", [], "(m, q, xi, n) rows expected infeasible"),
        },
        "frontier": {
            "enabled": Field("bool", False, "run the correlation-adversary sweep"),
            "n": Field("int_list", [32], "sample sizes"),
            "trials": Field("int", 300, "games per cell", minimum=2),
            "thresholds": Field("int", 64, "threshold grid size", minimum=2),
            "pilot_trials": Field("int", 75, "games used to place thresholds", minimum=1),
            "compressed_d": Field("int_list", [1], "compressed dimensions compared with the raw model"),
            "xi": Field("float", 0.1, "soundness level for the raw-model check"),
        },
        "problem": _problem_block(4096),
        "distribution": _distribution_block(),
        "compressor": {
            "c_w": Field("float", 1.0, "clip radius"),
            "nu": Field("float", 0.4, "dither radius"),
        },
    },
    "f-table": {
        "table": {
            "a_min": Field("float", 0.0, "smallest gap"),
            "a_max": Field("float", 8.0, "largest gap"),
            "a_steps": Field("int", 33, "grid points in a", minimum=2),
            "p_min": Field("float", 0.0, "smallest weight"),
            "p_max": Field("float", 0.5, "largest weight"),
            "p_steps": Field("int", 11, "grid points in p", minimum=2),
        },
        "checks": {
            "mc_samples": Field("int", 10**7, "Monte Carlo draws for the quadrature cross-check", minimum=2),
            "mc_a": Field("float", 2.0, "gap of the cross-check"),
            "mc_p": Field("float", 0.5, "weight of the cross-check"),
        },
    },
}

TOP_LEVEL = {
    "experiment": Field("str", REQUIRED, "experiment kind", tuple(SCHEMAS)),
    "seed": Field("int", 0, "root seed", minimum=0),
    "output": Field("str", "", "output directory (default results/<experiment>)"),
    "description": Field("str", "", "free text"),
}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def _coerce(where: str, field: Field, value):
    t = field.type
    if t == "int":
        if not _is_int(value):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        out = value
    elif t == "float":
        if not _is_real(value):
            raise ConfigError(f"{where}: expected a finite number, got {value!r}")
        out = float(value)
    elif t == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        out = value
    elif t == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false, got {value!r}")
        out = value
    elif t == "int_list":
        if not isinstance(value, list) or not value or not all(_is_int(v) for v in value):
            raise ConfigError(f"{where}: expected a non-empty list of integers, got {value!r}")
        out = list(value)
    elif t == "float_list":
        if not isinstance(value, list) or not value or not all(_is_real(v) for v in value):
            raise ConfigError(f"{where}: expected a non-empty list of numbers, got {value!r}")
        out = [float(v) for v in value]
    elif t == "float_or_list":
        if _is_real(value):
            out = float(value)
        elif isinstance(value, list) and value and all(_is_real(v) for v in value):
            out = [float(v) for v in value]
        else:
            raise ConfigError(f"{where}: expected a number or a list of numbers, got {value!r}")
    elif t == "p_star":
        if value in ("zero", "random"):
            out = value
        elif isinstance(value, list) and value and all(_is_real(v) for v in value):
            out = [float(v) for v in value]
        else:
            raise ConfigError(f"{where}: expected 'zero', 'random' or a list of numbers, got {value!r}")
    elif t == "tuple_list":
        ok = isinstance(value, list) and all(
            isinstance(r, list) and len(r) == 4 and _is_int(r[0]) and _is_real(r[1]) and _is_real(r[2]) and _is_int(r[3])
            for r in value
        )
        if not ok:
            raise ConfigError(f"{where}: expected a list of [m, q, xi, n] rows, got {value!r}")
        out = [[int(r[0]), float(r[1]), float(r[2]), int(r[3])] for r in value]
    else:  # pragma: no cover - schema bug
        raise ConfigError(f"{where}: unknown field type {t}")
    if field.choices and out not in field.choices:
        raise ConfigError(f"{where}: {out!r} is not one of {list(field.choices)}")
    if field.minimum is not None:
        vals = out if isinstance(out, list) else [out]
        for v in vals:
            if v < field.minimum:
                raise ConfigError(f"{where}: {v!r} is below the minimum {field.minimum}")
    return out


def _fill(where: str, schema: dict, given: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{where}: expected a table")
    unknown = sorted(set(given) - set(schema))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(schema)}")
    out = {}
    for key, field in schema.items():
        label = f"{where}.{key}" if where else key
        if key in given:
            out[key] = _coerce(label, field, given[key])
        elif field.default is REQUIRED:
            raise ConfigError(f"{label}: required key is missing")
        else:
            out[key] = copy.deepcopy(field.default)
    return out


def normalize_config(raw: dict) -> dict:
    """Validate a parsed config and fill in defaults.

    Raises
    ------
    ConfigError
        On unknown experiments, blocks or keys, wrong types or missing
        required values.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table")
    if "experiment" not in raw:
        raise ConfigError("experiment: required key is missing")
    kind = raw["experiment"]
    if kind not in SCHEMAS:
        raise ConfigError(f"experiment: unknown experiment kind {kind!r}; known: {sorted(SCHEMAS)}")
    blocks = SCHEMAS[kind]
    top = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in raw.items() if isinstance(v, dict)}
    unknown = sorted(set(tables) - set(blocks))
    if unknown:
        raise ConfigError(f"unknown block(s) {unknown} for {kind}; allowed: {sorted(blocks)}")
    cfg = _fill("", TOP_LEVEL, top)
    if not cfg["output"]:
        cfg["output"] = f"results/{kind}"
    for name, schema in blocks.items():
        cfg[name] = _fill(name, schema, tables.get(name, {}))
    return cfg


def load_config(path) -> dict:
    """Read, parse and normalize a TOML config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: not valid TOML: {exc}") from exc
    return normalize_config(raw)


def describe_schema(kind: str) -> str:
    """Human-readable key listing for one experiment kind."""
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    lines = []
    for key, f in TOP_LEVEL.items():
        lines.append(f"{key} ({f.type}, default {f.default!r}): {f.doc}")
    for block, schema in SCHEMAS[kind].items():
        lines.append(f"[{block}]")
        for key, f in schema.items():
            lines.append(f"  {key} ({f.type}, default {f.default!r}): {f.doc}")
    return "\n".join(lines)
