"""Command-line front end: run factorial sweeps, regenerate reports, and
convert traces.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 partial sweep.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .sweep import ConfigError, load_sweep, run_sweep, validate_config, write_reports
from .trace import export_trace, import_trace

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dls-bench",
        description="Two-level dynamic loop self-scheduling benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the factorial sweep described by a config")
    run.add_argument("--config", required=True, help="path to the JSON experiment config")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument(
        "--serialize-requests",
        action="store_true",
        help="force deterministic round-robin request ordering (test mode)",
    )
    run.add_argument(
        "--allow-oversubscribe",
        action="store_true",
        help="run even when P*T exceeds the available cores",
    )
    run.add_argument(
        "--override-excluded",
        action="store_true",
        help="permit techniques excluded by default (FSC anywhere; SS/WF at the process level)",
    )
    run.add_argument("--keep-traces", action="store_true",
                     help="export one execution trace per cell")
    run.add_argument("--format", choices=("csv", "markdown"), default="csv")

    report = sub.add_parser("report", help="regenerate reports from per-cell results")
    report.add_argument("--in", dest="in_dir", required=True, help="sweep output directory")
    report.add_argument("--format", choices=("csv", "markdown"), default="csv")

    trace = sub.add_parser("trace", help="convert or re-emit a recorded trace")
    trace.add_argument("--in", dest="in_path", required=True, help="trace file to read")
    trace.add_argument("--format", choices=("json-lines", "csv"), required=True)
    trace.add_argument("--out", help="output path (defaults next to the input)")

    return parser


def _cmd_run(args) -> int:
    overrides = {}
    if args.serialize_requests:
        overrides["serialize_requests"] = True
    if args.allow_oversubscribe:
        overrides["allow_oversubscribe"] = True
    if args.override_excluded:
        overrides["override_excluded"] = True
    if args.keep_traces:
        overrides["keep_traces"] = True
    try:
        raw = json.loads(Path(args.config).read_text() or "{}")
        if not isinstance(raw, dict):
            raise ConfigError(["config root must be a JSON object"])
        raw.update(overrides)
        config = validate_config(raw)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for warning in config.warnings:
        print(f"warning: {warning}", file=sys.stderr)

    out_dir = args.out or config.output_dir
    try:
        result = run_sweep(config, out_dir=out_dir, progress=lambda m: print(m, flush=True))
    except Exception as exc:  # noqa: BLE001 - sweep-level failure
        print(f"error: sweep failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_reports(result, out_dir, fmt=args.format)

    complete = [k for k, s in result.cells.items() if s.ok]
    print(f"{len(complete)}/{len(result.cells)} cells complete; reports in {out_dir}")
    if result.best_two_level and result.baseline_ok:
        best = result.best_two_level
        print(
            f"best two-level: {best[0]} + {best[1]} "
            f"({result.improvement(best):+.2f}% vs {'/'.join(result.baseline_key)})"
        )
    if not complete:
        return EXIT_RUNTIME
    if result.failed_cells:
        print(
            "failed cells: " + ", ".join("x".join(k) for k in result.failed_cells),
            file=sys.stderr,
        )
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        result = load_sweep(args.in_dir)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    paths = write_reports(result, args.in_dir, fmt=args.format)
    for path in paths:
        print(path)
    return EXIT_OK if not result.failed_cells else EXIT_PARTIAL


def _cmd_trace(args) -> int:
    try:
        events = import_trace(args.in_path)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read trace {args.in_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    suffix = ".jsonl" if args.format == "json-lines" else ".csv"
    out_path = args.out or str(Path(args.in_path).with_suffix(suffix))
    try:
        export_trace(events, out_path, args.format)
    except OSError as exc:
        print(f"error: cannot write {out_path}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out_path)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "report":
        return _cmd_report(args)
    return _cmd_trace(args)


if __name__ == "__main__":
    sys.exit(main())
