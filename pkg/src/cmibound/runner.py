"""Run experiments into reports and verify stored reports.

A report is a JSON document holding the normalized config, every work item
with its seed path and value, the aggregated results and acceptance checks,
and a ``timing`` block. Everything outside ``timing`` is reproduced byte for
byte by re-running the same config.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .config import normalize_config
from .core import Seed
from .exceptions import ConfigError, ReportError
from .experiments import Table, build_context, get_experiment

__all__ = [
    "FORMAT_VERSION",
    "WORKERS_ENV",
    "VersionMismatchWarning",
    "VerifyResult",
    "worker_count",
    "run_experiment",
    "write_outputs",
    "verify_report",
    "load_report",
]

FORMAT_VERSION = 1
WORKERS_ENV = "CMIBOUND_WORKERS"
SPOT_FRACTION = 0.1


class VersionMismatchWarning(UserWarning):
    """The report was written by a different library version."""


def worker_count(value: int | None = None) -> int:
    """Resolve the worker count from ``value`` or ``CMIBOUND_WORKERS`` (default 1)."""
    if value is None:
        raw = os.environ.get(WORKERS_ENV, "1").strip() or "1"
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"worker count must be >= 1, got {value}")
    return value


def _normalize(obj):
    """JSON round trip, so in-memory values equal values read back from disk."""
    return json.loads(json.dumps(obj, default=_json_default))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


@lru_cache(maxsize=4)
def _cached_context(cfg_json: str):
    cfg = json.loads(cfg_json)
    return cfg, build_context(cfg)


def _compute_item(args) -> object:
    cfg_json, key = args
    cfg, ctx = _cached_context(cfg_json)
    exp = get_experiment(cfg["experiment"])
    seed = Seed(cfg["seed"]).child(*key)
    return _normalize(exp.compute(cfg, ctx, tuple(key), seed))


def _compute_all(cfg: dict, keys: list, workers: int) -> list:
    cfg_json = json.dumps(cfg, sort_keys=True)
    tasks = [(cfg_json, tuple(k)) for k in keys]
    if workers <= 1 or len(tasks) <= 1:
        return [_compute_item(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so the join is deterministic
        return list(pool.map(_compute_item, tasks, chunksize=chunk))


def _aggregate(cfg: dict, ctx: dict, keys: list, values: list):
    exp = get_experiment(cfg["experiment"])
    results, checks, tables = exp.aggregate(cfg, ctx, [tuple(k) for k in keys], values)
    return _normalize(results), _normalize(checks), tables


def run_experiment(cfg: dict, workers: int | None = None) -> tuple[dict, dict]:
    """Execute a normalized config.

    Returns
    -------
    report : dict
        The JSON-ready report.
    tables : dict
        CSV sidecars keyed by file stem.

    Raises
    ------
    ConfigError
        For parameters rejected by the modules.
    NumericalError
        For numerical failures during the run.
    """
    cfg = normalize_config(cfg)
    workers = worker_count(workers)
    t0 = time.perf_counter()
    exp = get_experiment(cfg["experiment"])
    ctx = build_context(cfg)
    keys = [list(k) for k in exp.items(cfg)]
    t1 = time.perf_counter()
    values = _compute_all(cfg, keys, workers)
    t2 = time.perf_counter()
    results, checks, tables = _aggregate(cfg, ctx, keys, values)
    tables = {**tables, **exp.extra_tables(cfg, ctx)}
    t3 = time.perf_counter()
    report = {
        "format": "cmibound-report",
        "format_version": FORMAT_VERSION,
        "library_version": __version__,
        "experiment": cfg["experiment"],
        "config": cfg,
        "seed": {"root": cfg["seed"], "item_rule": "Seed(root).child(*key)"},
        "items": [{"key": k, "value": v} for k, v in zip(keys, values)],
        "results": results,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
        "timing": {
            "setup_seconds": t1 - t0,
            "items_seconds": t2 - t1,
            "aggregate_seconds": t3 - t2,
            "total_seconds": t3 - t0,
            "workers": workers,
        },
    }
    return report, tables


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_table(path: Path, table: Table) -> None:
    """Write one CSV sidecar: a ``#`` header comment, the column row, then 17-digit values."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {table.comment}\n")
        w = csv.writer(fh)
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])


def write_outputs(report: dict, tables: dict, out_dir) -> Path:
    """Write ``report.json``, ``checks.csv`` and the sidecars; return the report path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = dict(report)
    report["csv"] = sorted([f"{name}.csv" for name in tables] + ["checks.csv"])
    path = out / "report.json"
    path.write_text(json.dumps(report, indent=1, sort_keys=True, default=_json_default) + "\n")
    for name, table in tables.items():
        write_table(out / f"{name}.csv", table)
    checks = Table(
        "columns: name = check, observed = measured value, relation and limit = pass condition, passed = 1 for PASS",
        ("name", "observed", "relation", "limit", "passed"),
        [[c["name"], c["observed"], c["relation"], c["limit"], c["passed"]] for c in report["checks"]],
    )
    write_table(out / "checks.csv", checks)
    return path


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


@dataclass
class VerifyResult:
    """Outcome of :func:`verify_report`; truthy when everything agreed."""

    ok: bool
    version_match: bool
    checked_items: list = field(default_factory=list)
    mismatches: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


_REQUIRED = ("format", "format_version", "library_version", "experiment", "config", "items", "results", "checks", "passed")


def load_report(path) -> dict:
    """Read a report and check its structure.

    Raises
    ------
    ReportError
        If the file is missing, is not JSON or lacks required fields.
    """
    path = Path(path)
    try:
        report = json.loads(path.read_text())
    except OSError as exc:
        raise ReportError(f"cannot read report {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(report, dict) or report.get("format") != "cmibound-report":
        raise ReportError(f"{path}: not a cmibound report")
    missing = [k for k in _REQUIRED if k not in report]
    if missing:
        raise ReportError(f"{path}: missing field(s) {missing}")
    if report["format_version"] != FORMAT_VERSION:
        raise ReportError(f"{path}: unsupported format version {report['format_version']}")
    if not isinstance(report["items"], list) or not all(isinstance(i, dict) and "key" in i and "value" in i for i in report["items"]):
        raise ReportError(f"{path}: malformed items")
    return report


def _close(a, b, rtol: float, path: str, out: list) -> None:
    if isinstance(a, dict) and isinstance(b, dict):
        if set(a) != set(b):
            out.append(f"{path}: keys differ")
            return
        for k in a:
            _close(a[k], b[k], rtol, f"{path}.{k}", out)
    elif isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            out.append(f"{path}: lengths differ ({len(a)} vs {len(b)})")
            return
        for i, (x, y) in enumerate(zip(a, b)):
            _close(x, y, rtol, f"{path}[{i}]", out)
    elif isinstance(a, bool) or isinstance(b, bool) or isinstance(a, str) or a is None or b is None:
        if a != b:
            out.append(f"{path}: {a!r} != {b!r}")
    elif isinstance(a, (int, float)) and isinstance(b, (int, float)):
        if math.isnan(a) and math.isnan(b):
            return
        if rtol == 0.0:
            if a != b:
                out.append(f"{path}: {a!r} != {b!r}")
        elif not math.isclose(a, b, rel_tol=rtol, abs_tol=1e-12):
            out.append(f"{path}: {a!r} vs {b!r}")
    elif a != b:
        out.append(f"{path}: {a!r} != {b!r}")


def spot_check_indices(n_items: int, root: int, fraction: float = SPOT_FRACTION) -> list:
    """Deterministic sample of ``ceil(fraction * n_items)`` item positions."""
    k = min(n_items, max(1, math.ceil(fraction * n_items)))
    rng = Seed(root).child(999_999).generator()
    return sorted(int(i) for i in rng.choice(n_items, size=k, replace=False))


def verify_report(path, fraction: float = SPOT_FRACTION) -> VerifyResult:
    """Re-derive a report's aggregates and a seeded fraction of its items.

    Aggregates (results, checks, pass flag) are recomputed from the stored
    items, and ``ceil(fraction * n)`` items are recomputed from their
    recorded seeds. Values must agree exactly; reports from another library
    version trigger :class:`VersionMismatchWarning` and are compared with a
    relative tolerance of ``1e-9``.

    Raises
    ------
    ReportError
        If the report is corrupt.
    """
    report = load_report(path)
    version_match = report["library_version"] == __version__
    rtol = 0.0
    if not version_match:
        warnings.warn(
            f"report written by version {report['library_version']}, verifying with {__version__}; best-effort comparison",
            VersionMismatchWarning,
            stacklevel=2,
        )
        rtol = 1e-9
    try:
        cfg = normalize_config(report["config"])
    except ConfigError as exc:
        raise ReportError(f"report config is invalid: {exc}") from exc
    if cfg != report["config"]:
        raise ReportError("report config is not in normalized form")
    exp = get_experiment(cfg["experiment"])
    mismatches: list = []
    keys = [list(k) for k in exp.items(cfg)]
    stored_keys = [i["key"] for i in report["items"]]
    if keys != stored_keys:
        return VerifyResult(False, version_match, [], ["item keys do not match the config"])
    values = [i["value"] for i in report["items"]]
    ctx = build_context(cfg)
    try:
        results, checks, _ = _aggregate(cfg, ctx, keys, values)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ReportError(f"stored items are malformed: {exc}") from exc
    _close(results, report["results"], rtol, "results", mismatches)
    _close(checks, report["checks"], rtol, "checks", mismatches)
    if report["passed"] != all(c["passed"] for c in checks):
        mismatches.append("passed flag disagrees with the checks")
    checked = spot_check_indices(len(keys), cfg["seed"], fraction)
    cfg_json = json.dumps(cfg, sort_keys=True)
    for idx in checked:
        fresh = _compute_item((cfg_json, tuple(keys[idx])))
        _close(fresh, values[idx], rtol, f"items[{idx}]", mismatches)
    return VerifyResult(not mismatches, version_match, [keys[i] for i in checked], mismatches)
