"""Command-line entry point.

Modes: `refine` (full pipeline), `baseline` (rule-only fixer, no model),
`preprocess` (emit cleaned sources), `report` (re-aggregate an existing
outcomes file). A fully failing corpus still exits 0: failures are data.
Exit 1 means infrastructure trouble (no compiler, backend down), exit 2 a
configuration/usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import compilebox, llm, metrics, pipeline
from .compilebox import CompileRequest
from .config import API_KEY_ENV, PipelineConfig, load_config
from .corpus import ProgramEntry, bucket_by_context, load_manifest
from .errors import (
    BackendUnavailable,
    CompilerNotFound,
    ConfigError,
    ExecError,
    FixtureExhausted,
    ManifestParseError,
    MissingArtifact,
    WorkdirError,
)
from .preprocess import Origin, SourceUnit, apply_baseline_rules, load_rule_config, preprocess_unit
from .runbox import VerdictStatus, run_tests

_INFRA_ERRORS = (CompilerNotFound, WorkdirError, BackendUnavailable, FixtureExhausted, ExecError)
_CONFIG_ERRORS = (ConfigError, ManifestParseError, MissingArtifact)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="benchmark manifest (JSON)")
    p.add_argument("--out", default="redec-out", help="run output directory")
    p.add_argument("--rules", help="JSON file overriding the cleanup pattern sets")
    p.add_argument("--config", help="TOML or JSON config file")
    p.add_argument("--compiler", help="compiler executable (overrides config)")
    p.add_argument(
        "--bucket-range",
        default="200:2048:5",
        metavar="LO:HI:K",
        help="context-length bucketing for reports (default 200:2048:5)",
    )
    p.add_argument(
        "--thresholds",
        default="1,5,10,15",
        help="comma-separated success@C thresholds (default 1,5,10,15)",
    )
    p.add_argument(
        "--seed",
        type=int,
        default=0,
        help="seed for any randomized choices; archive layout is already deterministic",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redec",
        description=(
            "Repair raw C/C++ decompiler output until it recompiles and passes "
            "its test cases, using deterministic cleanup rules plus an "
            "iterative model-backed repair loop."
        ),
        epilog=f"The HTTP backend reads its API key from ${API_KEY_ENV} (never from flags).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="run the full two-phase repair pipeline")
    _add_common(p)
    p.add_argument("--backend", choices=("http", "replay", "record"), default="http")
    p.add_argument("--fixtures", help="fixtures directory (replay input / record output)")
    p.add_argument("--budget", type=int, default=15, help="query budget per program (default 15)")
    p.add_argument("--jobs", type=int, default=1, help="parallel refinement workers")
    p.add_argument("--always-refine", action="store_true", help="send the initial prompt even when preprocessing alone compiles")
    p.add_argument("--record", action="store_true", help="shorthand for --backend record")
    p.add_argument("--api-url", help="chat-completions endpoint (overrides config)")
    p.add_argument("--model", help="model name (overrides config)")

    p = sub.add_parser("baseline", help="rule-only fixer over the manifest (no model)")
    _add_common(p)

    p = sub.add_parser("preprocess", help="emit rule-cleaned sources and stop")
    _add_common(p)

    p = sub.add_parser("report", help="aggregate an existing outcomes.jsonl")
    _add_common(p)
    p.add_argument("--outcomes", required=True, help="path to outcomes.jsonl")
    return parser


def _parse_bucket_range(text: str) -> tuple[int, int, int]:
    try:
        lo, hi, k = (int(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"bad --bucket-range {text!r}, expected LO:HI:K") from None
    if lo >= hi or k < 1:
        raise ConfigError(f"bad --bucket-range {text!r}: need LO < HI and K >= 1")
    return lo, hi, k


def _parse_thresholds(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad --thresholds {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise ConfigError(f"bad --thresholds {text!r}: need positive integers")
    return values


def _load_pipeline_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.rules:
        cfg = replace(cfg, rules=load_rule_config(args.rules))
    if args.compiler:
        cfg = replace(cfg, compiler=replace(cfg.compiler, path=args.compiler))
    if getattr(args, "always_refine", False):
        cfg = replace(cfg, always_refine=True)
    if getattr(args, "api_url", None):
        cfg = replace(cfg, llm=replace(cfg.llm, url=args.api_url))
    if getattr(args, "model", None):
        cfg = replace(cfg, llm=replace(cfg.llm, model=args.model))
    return cfg


def _load_entries(args, need_tests: bool = False) -> list[ProgramEntry]:
    lo, hi, k = _parse_bucket_range(args.bucket_range)
    entries = bucket_by_context(load_manifest(args.manifest), lo, hi, k)
    if need_tests:
        untestable = [e.id for e in entries if not e.test_cases]
        if untestable:
            raise ConfigError(f"entries without test cases cannot be verified: {untestable}")
    return entries


def _write_outputs(
    out_dir: Path,
    records: list[metrics.OutcomeRecord],
    entries: list[ProgramEntry],
    thresholds: tuple[int, ...],
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = "".join(r.to_json_line() + "\n" for r in records)
    (out_dir / "outcomes.jsonl").write_text(lines, encoding="utf-8")
    report = metrics.aggregate(records, entries, thresholds)
    (out_dir / "report.json").write_text(metrics.emit_report(report, "json"), encoding="utf-8")
    (out_dir / "report.csv").write_text(metrics.emit_report(report, "csv"), encoding="utf-8")
    (out_dir / "report.txt").write_text(metrics.emit_report(report, "text"), encoding="utf-8")


def _make_backend(args, cfg: PipelineConfig) -> llm.CompletionBackend:
    backend_name = "record" if args.record else args.backend
    if backend_name == "replay":
        if not args.fixtures:
            raise ConfigError("--backend replay requires --fixtures")
        return llm.ReplayBackend(args.fixtures)
    http = llm.HttpBackend(
        url=cfg.llm.url,
        model=cfg.llm.model,
        api_key=os.environ.get(API_KEY_ENV) or os.environ.get("OPENAI_API_KEY"),
        temperature=cfg.llm.temperature,
        timeout_s=cfg.llm.timeout_s,
        max_retries=cfg.llm.max_retries,
        backoff_s=cfg.llm.backoff_s,
        min_interval_s=cfg.llm.min_interval_s,
    )
    if backend_name == "record":
        if not args.fixtures:
            raise ConfigError("--backend record requires --fixtures")
        return llm.RecordingBackend(http, args.fixtures)
    return http


def _cmd_refine(args) -> int:
    cfg = _load_pipeline_config(args)
    entries = _load_entries(args, need_tests=True)
    backend = _make_backend(args, cfg)
    if args.budget < 1:
        raise ConfigError("--budget must be >= 1")
    out_dir = Path(args.out)
    completed: dict[str, metrics.OutcomeRecord] = {}

    def _flush_completed() -> None:
        # Records for whatever finished, still in manifest order.
        done = [completed[e.id] for e in entries if e.id in completed]
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = "".join(r.to_json_line() + "\n" for r in done)
        (out_dir / "outcomes.jsonl").write_text(lines, encoding="utf-8")

    try:
        outcomes = pipeline.refine_all(
            entries,
            args.budget,
            backend,
            cfg,
            run_dir=out_dir,
            jobs=max(1, args.jobs),
            on_outcome=lambda o: completed.__setitem__(o.program_id, o.to_record()),
        )
    except KeyboardInterrupt:
        _flush_completed()
        print("interrupted: flushed records for completed programs", file=sys.stderr)
        return 130
    records = [o.to_record() for o in outcomes]
    _write_outputs(out_dir, records, entries, _parse_thresholds(args.thresholds))
    return 0


def _cmd_baseline(args) -> int:
    """Rule-only comparator: cleanup rules + header hint, compile, test. Zero queries."""
    cfg = _load_pipeline_config(args)
    entries = _load_entries(args, need_tests=True)
    out_dir = Path(args.out)
    records = []
    for entry in entries:
        raw = SourceUnit(entry.id, entry.pseudocode_text, Origin.DECOMPILER)
        fixed = apply_baseline_rules(raw, entry.header_hint, cfg.rules)
        prog_dir = out_dir / entry.id
        prog_dir.mkdir(parents=True, exist_ok=True)
        (prog_dir / "baseline.c").write_text(fixed.code, encoding="utf-8")
        result = compilebox.compile(
            CompileRequest(unit=fixed, workdir=prog_dir / "build", sanitize=True), cfg.compiler
        )
        (prog_dir / "compile.txt").write_text(result.raw_stderr, encoding="utf-8")
        if not result.success:
            records.append(
                metrics.OutcomeRecord(entry.id, "compile-failed", queries_used=0, success_at=None)
            )
            continue
        verdicts = run_tests(
            result.binary_path,
            entry.test_cases,
            limits=cfg.limits,
            code=fixed.code,
            report_dir=prog_dir,
        )
        passed = len(verdicts) == len(entry.test_cases) and all(
            v.status is VerdictStatus.PASS for v in verdicts
        )
        records.append(
            metrics.OutcomeRecord(
                entry.id,
                "functional" if passed else "compiled-but-failing",
                queries_used=0,
                success_at=0 if passed else None,
            )
        )
    _write_outputs(out_dir, records, entries, _parse_thresholds(args.thresholds))
    return 0


def _cmd_preprocess(args) -> int:
    cfg = _load_pipeline_config(args)
    entries = _load_entries(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in entries:
        raw = SourceUnit(entry.id, entry.pseudocode_text, Origin.DECOMPILER)
        cleaned = preprocess_unit(raw, cfg.rules)
        (out_dir / f"{entry.id}.c").write_text(cleaned.code, encoding="utf-8")
    return 0


def _cmd_report(args) -> int:
    entries = _load_entries(args)
    outcomes_path = Path(args.outcomes)
    if not outcomes_path.is_file():
        raise ConfigError(f"outcomes file not found: {outcomes_path}")
    records = [
        metrics.OutcomeRecord.from_json_line(line)
        for line in outcomes_path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = metrics.aggregate(records, entries, _parse_thresholds(args.thresholds))
    (out_dir / "report.json").write_text(metrics.emit_report(report, "json"), encoding="utf-8")
    (out_dir / "report.csv").write_text(metrics.emit_report(report, "csv"), encoding="utf-8")
    (out_dir / "report.txt").write_text(metrics.emit_report(report, "text"), encoding="utf-8")
    sys.stdout.write(metrics.emit_report(report, "text"))
    return 0


_COMMANDS = {
    "refine": _cmd_refine,
    "baseline": _cmd_baseline,
    "preprocess": _cmd_preprocess,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _INFRA_ERRORS as exc:
        print(f"infrastructure error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
