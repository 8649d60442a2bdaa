"""Benchmark corpus handling: manifests, token estimates, context-length buckets."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from .errors import InvalidRange, ManifestParseError, MissingArtifact

DEFAULT_TIMEOUT_MS = 5000

TokenEstimator = Callable[[str], int]


class CompareMode(Enum):
    EXACT = "exact"
    NORMALIZED = "normalized"


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # keep pytest from collecting the domain type

    stdin_text: str
    expected_stdout: str
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    compare_mode: CompareMode = CompareMode.NORMALIZED

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")


@dataclass(frozen=True)
class ProgramEntry:
    """One benchmark program: exported pseudocode plus its test suite.

    Read-only after load; safe to share across parallel workers.
    `header_hint` is consumed only by the rule-only baseline; the LLM loop
    deliberately never sees it.
    """

    id: str
    pseudocode_path: Path
    test_cases: tuple[TestCase, ...]
    source_tokens: int
    bucket: int | None = None
    header_hint: str | None = None
    pseudocode_text: str = field(default="", repr=False)
    load_warnings: tuple[str, ...] = ()


def estimate_tokens(text: str) -> int:
    """Deterministic proxy token count: ceil(utf-8 byte length / 4).

    Pluggable wherever it's consumed so a real tokenizer can be substituted.
    """
    return math.ceil(len(text.encode("utf-8")) / 4)


def _parse_test(raw: object, entry_id: str, index: int) -> TestCase:
    if not isinstance(raw, dict):
        raise ManifestParseError(f"entry {entry_id!r}: tests[{index}] is not an object")
    try:
        stdin_text = raw["stdin"]
        expected = raw["stdout"]
    except KeyError as exc:
        raise ManifestParseError(
            f"entry {entry_id!r}: tests[{index}] missing key {exc.args[0]!r}"
        ) from None
    if not isinstance(stdin_text, str) or not isinstance(expected, str):
        raise ManifestParseError(f"entry {entry_id!r}: tests[{index}] stdin/stdout must be strings")
    timeout_ms = raw.get("timeout_ms", DEFAULT_TIMEOUT_MS)
    if not isinstance(timeout_ms, int) or timeout_ms <= 0:
        raise ManifestParseError(f"entry {entry_id!r}: tests[{index}] timeout_ms must be a positive integer")
    mode_name = raw.get("compare_mode", CompareMode.NORMALIZED.value)
    try:
        mode = CompareMode(mode_name)
    except ValueError:
        raise ManifestParseError(
            f"entry {entry_id!r}: tests[{index}] unknown compare_mode {mode_name!r}"
        ) from None
    return TestCase(stdin_text, expected, timeout_ms, mode)


def load_manifest(path: str | Path, token_estimator: TokenEstimator = estimate_tokens) -> list[ProgramEntry]:
    """Load a benchmark manifest (JSON array of program objects).

    Pseudocode paths are resolved relative to the manifest's directory.
    Undecodable bytes in a pseudocode file are replaced and flagged in the
    entry's load_warnings.
    """
    path = Path(path)
    try:
        raw_text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ManifestParseError(f"manifest not found: {path}") from None
    except OSError as exc:
        raise ManifestParseError(f"cannot read manifest {path}: {exc}") from exc
    try:
        doc = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(doc, list):
        raise ManifestParseError(f"manifest {path} must be a top-level JSON array")

    base = path.parent
    entries: list[ProgramEntry] = []
    seen: set[str] = set()
    for i, item in enumerate(doc):
        if not isinstance(item, dict):
            raise ManifestParseError(f"manifest entry {i} is not an object")
        try:
            entry_id = item["id"]
            rel = item["pseudocode"]
        except KeyError as exc:
            raise ManifestParseError(f"manifest entry {i} missing key {exc.args[0]!r}") from None
        if not isinstance(entry_id, str) or not entry_id:
            raise ManifestParseError(f"manifest entry {i}: id must be a nonempty string")
        if entry_id in seen:
            raise ManifestParseError(f"duplicate manifest id {entry_id!r}")
        seen.add(entry_id)

        pseudo_path = (base / rel).resolve()
        if not pseudo_path.is_file():
            raise MissingArtifact(f"entry {entry_id!r}: pseudocode file missing: {pseudo_path}")

        warnings: list[str] = []
        blob = pseudo_path.read_bytes()
        try:
            text = blob.decode("utf-8")
        except UnicodeDecodeError:
            text = blob.decode("utf-8", errors="replace")
            warnings.append(f"undecodable bytes replaced in {rel}")

        tests_raw = item.get("tests", [])
        if not isinstance(tests_raw, list):
            raise ManifestParseError(f"entry {entry_id!r}: tests must be an array")
        tests = tuple(_parse_test(t, entry_id, j) for j, t in enumerate(tests_raw))

        hint = item.get("header_hint")
        if hint is not None and not isinstance(hint, str):
            raise ManifestParseError(f"entry {entry_id!r}: header_hint must be a string")

        entries.append(
            ProgramEntry(
                id=entry_id,
                pseudocode_path=pseudo_path,
                test_cases=tests,
                source_tokens=token_estimator(text),
                header_hint=hint,
                pseudocode_text=text,
                load_warnings=tuple(warnings),
            )
        )
    return entries


def save_manifest(entries: Sequence[ProgramEntry], path: str | Path) -> None:
    """Write entries back out in the manifest schema (inverse of load_manifest)."""
    path = Path(path)
    base = path.parent.resolve()
    doc = []
    for e in entries:
        item: dict = {
            "id": e.id,
            "pseudocode": os.path.relpath(e.pseudocode_path, base),
            "tests": [
                {
                    "stdin": t.stdin_text,
                    "stdout": t.expected_stdout,
                    "timeout_ms": t.timeout_ms,
                    "compare_mode": t.compare_mode.value,
                }
                for t in e.test_cases
            ],
        }
        if e.header_hint is not None:
            item["header_hint"] = e.header_hint
        doc.append(item)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def bucket_by_context(
    entries: Sequence[ProgramEntry], lo: int = 200, hi: int = 2048, k: int = 5
) -> list[ProgramEntry]:
    """Assign each entry to one of k equal-width half-open buckets over [lo, hi).

    bucket = floor((tokens - lo) * k / (hi - lo)); entries outside the range
    stay unassigned and get a load warning flag.
    """
    if lo >= hi or k < 1:
        raise InvalidRange(f"invalid bucket range lo={lo} hi={hi} k={k}")
    out = []
    for e in entries:
        t = e.source_tokens
        if lo <= t < hi:
            out.append(replace(e, bucket=(t - lo) * k // (hi - lo)))
        else:
            flagged = e.load_warnings + (f"source_tokens={t} outside bucket range [{lo},{hi})",)
            out.append(replace(e, bucket=None, load_warnings=flagged))
    return out
