"""Aggregate outcome records into the evaluation report.

The report mirrors the protocol's two tables: recompilation success rate at
conversation-chain thresholds, and success counts per context-length bucket.
Aggregation is pure and stateless; comparative runs are produced by running
the CLI in different modes over the same manifest and joining by program id.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import ProgramEntry
from .errors import MismatchedRecords

DEFAULT_THRESHOLDS = (1, 5, 10, 15)

UNBUCKETED = -1


@dataclass(frozen=True)
class OutcomeRecord:
    """One line of outcomes.jsonl: a refinement outcome minus the bulky bodies."""

    program_id: str
    status: str
    queries_used: int
    success_at: int | None
    revert_count: int = 0
    history_truncations: int = 0
    sanitizer_triggered: int = 0
    sanitizer_fixed: int = 0

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "program_id": self.program_id,
                "status": self.status,
                "queries_used": self.queries_used,
                "success_at": self.success_at,
                "revert_count": self.revert_count,
                "history_truncations": self.history_truncations,
                "sanitizer_triggered": self.sanitizer_triggered,
                "sanitizer_fixed": self.sanitizer_fixed,
            }
        )

    @classmethod
    def from_json_line(cls, line: str) -> "OutcomeRecord":
        doc = json.loads(line)
        return cls(
            program_id=doc["program_id"],
            status=doc["status"],
            queries_used=doc["queries_used"],
            success_at=doc.get("success_at"),
            revert_count=doc.get("revert_count", 0),
            history_truncations=doc.get("history_truncations", 0),
            sanitizer_triggered=doc.get("sanitizer_triggered", 0),
            sanitizer_fixed=doc.get("sanitizer_fixed", 0),
        )


@dataclass(frozen=True)
class ThresholdStat:
    count: int
    rate: float  # 4 decimal places


@dataclass(frozen=True)
class RunReport:
    total_programs: int
    success_at_c: Mapping[int, ThresholdStat]
    bucket_success: Mapping[int, int]
    revert_events: int
    sanitizer_triggered: int
    sanitizer_fixed: int


def _as_record(outcome) -> OutcomeRecord:
    if isinstance(outcome, OutcomeRecord):
        return outcome
    return outcome.to_record()


def aggregate(
    outcomes: Iterable[object],
    entries: Sequence[ProgramEntry],
    thresholds: Sequence[int] = DEFAULT_THRESHOLDS,
) -> RunReport:
    """Compute success@C and per-bucket success counts.

    success@C counts outcomes whose success ordinal is <= C; bucket counts
    cover the successes within the largest threshold, keyed by the matching
    entry's bucket (UNBUCKETED for entries outside the bucket range), so the
    bucket counts always sum to the success count at max C.
    """
    records = [_as_record(o) for o in outcomes]
    by_id = {r.program_id: r for r in records}
    if len(by_id) != len(records):
        raise MismatchedRecords("duplicate program ids in outcomes")
    entry_ids = {e.id for e in entries}
    if entry_ids != set(by_id):
        missing = sorted(entry_ids - set(by_id))
        extra = sorted(set(by_id) - entry_ids)
        raise MismatchedRecords(f"outcomes/entries mismatch: missing={missing} extra={extra}")
    if any(t < 1 for t in thresholds):
        raise ValueError("thresholds must be positive")

    total = len(records)
    success_at_c = {}
    for c in sorted(set(thresholds)):
        count = sum(1 for r in records if r.success_at is not None and r.success_at <= c)
        success_at_c[c] = ThresholdStat(count=count, rate=round(count / total, 4) if total else 0.0)

    bucket_success: dict[int, int] = {}
    max_c = max(thresholds, default=None)
    bucket_of = {e.id: e.bucket for e in entries}
    for r in records:
        if r.success_at is None:
            continue
        if max_c is not None and r.success_at > max_c:
            continue
        b = bucket_of[r.program_id]
        key = UNBUCKETED if b is None else b
        bucket_success[key] = bucket_success.get(key, 0) + 1

    return RunReport(
        total_programs=total,
        success_at_c=success_at_c,
        bucket_success=dict(sorted(bucket_success.items())),
        revert_events=sum(r.revert_count for r in records),
        sanitizer_triggered=sum(r.sanitizer_triggered for r in records),
        sanitizer_fixed=sum(r.sanitizer_fixed for r in records),
    )


def report_to_json(report: RunReport) -> str:
    doc = {
        "total_programs": report.total_programs,
        "success_at_c": {
            str(c): {"count": s.count, "rate": s.rate} for c, s in sorted(report.success_at_c.items())
        },
        "bucket_success": {str(b): n for b, n in sorted(report.bucket_success.items())},
        "revert_events": report.revert_events,
        "sanitizer_triggered": report.sanitizer_triggered,
        "sanitizer_fixed": report.sanitizer_fixed,
    }
    return json.dumps(doc, indent=2) + "\n"


def report_from_json(text: str) -> RunReport:
    doc = json.loads(text)
    return RunReport(
        total_programs=doc["total_programs"],
        success_at_c={
            int(c): ThresholdStat(count=s["count"], rate=s["rate"])
            for c, s in doc["success_at_c"].items()
        },
        bucket_success={int(b): n for b, n in doc["bucket_success"].items()},
        revert_events=doc["revert_events"],
        sanitizer_triggered=doc["sanitizer_triggered"],
        sanitizer_fixed=doc["sanitizer_fixed"],
    )


def _report_to_csv(report: RunReport) -> str:
    out = io.StringIO()
    out.write("C,count,rate\n")
    for c, s in sorted(report.success_at_c.items()):
        out.write(f"{c},{s.count},{s.rate:.4f}\n")
    return out.getvalue()


def _report_to_text(report: RunReport) -> str:
    out = io.StringIO()
    out.write(f"programs evaluated: {report.total_programs}\n\n")
    out.write("recompilation success rate by conversation length\n")
    for c, s in sorted(report.success_at_c.items()):
        pct = round(s.rate * 100)
        out.write(f"  C = {c:<3d}  {s.count:>4d}/{report.total_programs:<4d}  {s.rate:.4f}  {pct:>3d}%\n")
    out.write("\nsuccess cases by context-length bucket\n")
    for b, n in sorted(report.bucket_success.items()):
        label = "unbucketed" if b == UNBUCKETED else f"bucket {b}"
        out.write(f"  {label:<10s}  {n}\n")
    out.write("\n")
    out.write(f"revert events: {report.revert_events}\n")
    out.write(f"sanitizer reports triggered: {report.sanitizer_triggered}\n")
    out.write(f"sanitizer reports fixed: {report.sanitizer_fixed}\n")
    return out.getvalue()


def emit_report(report: RunReport, format: str = "json") -> str:
    """Serialize a report deterministically as 'json', 'csv' or 'text'."""
    if format == "json":
        return report_to_json(report)
    if format == "csv":
        return _report_to_csv(report)
    if format == "text":
        return _report_to_text(report)
    raise ValueError(f"unknown report format: {format}")
