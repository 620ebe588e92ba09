"""Command-line entry point.

Commands
--------
``run <config>``
    Execute an experiment config (a TOML file, or the name of a shipped
    config) and write ``report.json`` plus CSV sidecars.
``verify <report>``
    Re-derive a report's aggregates and spot-check 10% of its items.
``list-experiments``
    List experiment kinds and shipped configs.

Exit codes: 0 ok, 2 config or report error, 3 numerical failure,
4 acceptance (or verification) failure. The worker count is read from
``CMIBOUND_WORKERS`` unless ``--workers`` is given.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from importlib import resources
from pathlib import Path

from . import __version__
from .config import describe_schema, load_config
from .exceptions import CMIBoundError, ConfigError, NumericalError, ReportError
from .experiments import EXPERIMENTS
from .runner import WORKERS_ENV, run_experiment, verify_report, write_outputs

__all__ = ["main", "shipped_configs", "resolve_config", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERICAL", "EXIT_ACCEPTANCE"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4


def shipped_configs() -> dict:
    """Shipped config names mapped to their paths."""
    root = resources.files("cmibound") / "configs"
    return {p.name[: -len(".toml")]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".toml")}


def resolve_config(name: str) -> Path:
    """A config path, or the path of a shipped config called ``name``."""
    path = Path(name)
    if path.exists():
        return path
    shipped = shipped_configs()
    stem = name[: -len(".toml")] if name.endswith(".toml") else name
    if stem in shipped:
        return shipped[stem]
    raise ConfigError(f"config {name!r} not found (shipped: {', '.join(sorted(shipped))})")


def _err(msg: str) -> None:
    print(f"cmibound: {msg}", file=sys.stderr)


def _cmd_run(args) -> int:
    try:
        path = resolve_config(args.config)
        cfg = load_config(path)
        if args.output:
            cfg["output"] = args.output
        report, tables = run_experiment(cfg, args.workers)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except NumericalError as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except CMIBoundError as exc:
        _err(f"config error: {type(exc).__name__}: {exc}")
        return EXIT_CONFIG
    out = write_outputs(report, tables, cfg["output"])
    if not args.quiet:
        for c in report["checks"]:
            print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['observed']!r} {c['relation']} {c['limit']!r}")
        print(f"report: {out} ({report['timing']['total_seconds']:.1f} s)")
    return EXIT_OK if report["passed"] else EXIT_ACCEPTANCE


def _cmd_verify(args) -> int:
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = verify_report(args.report, args.fraction)
    except (ReportError, ConfigError) as exc:
        _err(f"corrupt report: {exc}")
        return EXIT_CONFIG
    for w in caught:
        _err(f"warning: {w.message}")
    print(f"spot-checked {len(res.checked_items)} item(s)")
    for m in res.mismatches[:20]:
        print(f"mismatch: {m}")
    print("verified" if res.ok else "verification FAILED")
    return EXIT_OK if res.ok else EXIT_ACCEPTANCE


def _cmd_list(args) -> int:
    if args.schema:
        if args.schema not in EXPERIMENTS:
            _err(f"unknown experiment kind {args.schema!r}")
            return EXIT_CONFIG
        print(describe_schema(args.schema))
        return EXIT_OK
    for name, exp in EXPERIMENTS.items():
        print(f"{name:16s} {exp.description}")
    print("\nshipped configs:")
    for name, path in sorted(shipped_configs().items()):
        print(f"  {name:22s} {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmibound", description="Compressed CMI bound experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config", help="TOML config path or shipped config name")
    p.add_argument("--output", help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    p.add_argument("--quiet", action="store_true", help="do not print the check table")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="verify a report")
    p.add_argument("report", help="path to report.json")
    p.add_argument("--fraction", type=float, default=0.1, help="fraction of items recomputed (default 0.1)")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("list-experiments", help="list experiment kinds and shipped configs")
    p.add_argument("--schema", metavar="KIND", help="print the config schema of one kind")
    p.set_defaults(func=_cmd_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which matches the config code
        return int(exc.code or 0)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
