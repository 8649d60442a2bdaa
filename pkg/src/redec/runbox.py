"""Run compiled binaries against test cases; classify verdicts; parse sanitizer reports.

The pipeline executes model-modified, untrusted code: every case runs in its
own scratch working directory with a wall-clock timeout and a capped stdout.
Full syscall-level sandboxing is a deployment concern, not implemented here.
"""

from __future__ import annotations

import os
import re
import subprocess
import tempfile

try:
    import resource
except ImportError:  # non-POSIX: the optional memory cap is unavailable
    resource = None
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .corpus import CompareMode, TestCase
from .errors import ExecError, NotASanitizerReport

DEFAULT_ASAN_OPTIONS = "detect_leaks=0:symbolize=1:halt_on_error=1"
SOURCE_BASENAME = "unit.cpp"  # keep in sync with compilebox.SOURCE_FILENAME


class VerdictStatus(Enum):
    PASS = "pass"
    OUTPUT_MISMATCH = "output-mismatch"
    SANITIZER_ABORT = "sanitizer-abort"
    CRASH = "crash"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Frame:
    function: str
    line: int | None


@dataclass(frozen=True)
class SanitizerReport:
    kind: str
    faulting_statement: str | None
    frames: tuple[Frame, ...]
    raw_text: str


@dataclass(frozen=True)
class TestVerdict:
    case_index: int
    status: VerdictStatus
    actual_stdout: str
    sanitizer: SanitizerReport | None = None
    exit_code: int | None = None


@dataclass(frozen=True)
class ResourceLimits:
    stdout_cap_bytes: int = 1 << 20
    memory_bytes: int | None = None  # leave unset for sanitized binaries (ASAN reserves huge VA)
    asan_options: str = DEFAULT_ASAN_OPTIONS


DEFAULT_LIMITS = ResourceLimits()

_BANNER_RE = re.compile(
    r"==\d+==\s*ERROR:\s*(?P<tool>AddressSanitizer|LeakSanitizer|UndefinedBehaviorSanitizer|MemorySanitizer|ThreadSanitizer):?\s*(?P<kind>[A-Za-z0-9_-]+)"
)
_FRAME_RE = re.compile(
    r"^\s*#\d+\s+0x[0-9a-fA-F]+\s+in\s+(?P<func>.+?)"
    r"\s+(?:(?P<loc>\S+?):(?P<line>\d+)(?::\d+)?|\((?P<mod>[^)\s]+)\))\s*$",
    re.M,
)


def compare_output(actual: str, expected: str, mode: CompareMode) -> bool:
    """Exact is byte equality; Normalized strips per-line trailing whitespace
    and trailing blank lines first."""
    if mode is CompareMode.EXACT:
        return actual == expected
    return _normalize_text(actual) == _normalize_text(expected)


def _normalize_text(text: str) -> str:
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def parse_sanitizer_report(raw: str, code: str = "", source_name: str = SOURCE_BASENAME) -> SanitizerReport:
    """Extract kind, stack frames and the faulting source statement from a report.

    A frame counts as in-program when its file matches the standardized
    compile unit name; failing that, when its function name occurs in the code
    and its line number is inside the code's line range. The faulting
    statement is the code line of the first in-program frame, when resolvable.
    """
    m = _BANNER_RE.search(raw)
    if not m:
        raise NotASanitizerReport("no sanitizer error banner found")
    kind = m.group("kind")
    if m.group("tool") == "LeakSanitizer" and kind == "detected":
        kind = "memory-leak"

    frames: list[Frame] = []
    locations: list[str | None] = []
    for fm in _FRAME_RE.finditer(raw):
        frames.append(Frame(function=fm.group("func"), line=int(fm.group("line")) if fm.group("line") else None))
        locations.append(fm.group("loc"))

    code_lines = code.split("\n") if code else []
    faulting: str | None = None
    for frame, loc in zip(frames, locations):
        if frame.line is None or not (1 <= frame.line <= len(code_lines)):
            continue
        if loc is not None and os.path.basename(loc) == source_name:
            faulting = code_lines[frame.line - 1].strip()
            break
        func_ident = re.split(r"[(\s]", frame.function)[0]
        if func_ident and re.search(rf"(?<!\w){re.escape(func_ident)}(?!\w)", code):
            faulting = code_lines[frame.line - 1].strip()
            break
    return SanitizerReport(kind=kind, faulting_statement=faulting, frames=tuple(frames), raw_text=raw)


def has_sanitizer_banner(text: str) -> bool:
    return _BANNER_RE.search(text) is not None


def _rlimit_preexec(memory_bytes: int):
    def apply():
        resource.setrlimit(resource.RLIMIT_AS, (memory_bytes, memory_bytes))

    return apply


def run_tests(
    binary: str | Path,
    cases: Sequence[TestCase],
    limits: ResourceLimits = DEFAULT_LIMITS,
    code: str = "",
    report_dir: str | Path | None = None,
    scratch_dir: str | Path | None = None,
    stop_on_failure: bool = True,
) -> list[TestVerdict]:
    """Run each case with stdin piped in; classify the outcome.

    Statuses are total and mutually exclusive: timeout beats everything, then
    sanitizer abort (banner on stderr), then crash (signal-terminated), then
    output comparison. By default execution stops at the first non-Pass
    verdict — the repair loop fixes one defect at a time.

    Each case executes with its working directory set to a fresh scratch
    subdirectory, so relative-path writes by untrusted code land there and
    nowhere else. Raw sanitizer reports are archived as case<j>.asan.txt
    under report_dir.
    """
    binary = Path(binary).resolve()  # spawned with a per-case cwd; must stay absolute
    if not binary.is_file() or not os.access(binary, os.X_OK):
        raise ExecError(f"not an executable binary: {binary}")
    report_path = Path(report_dir) if report_dir is not None else None
    if report_path is not None:
        report_path.mkdir(parents=True, exist_ok=True)

    if scratch_dir is None and report_path is not None:
        scratch_dir = report_path / "scratch"
    cleanup: tempfile.TemporaryDirectory | None = None
    if scratch_dir is None:
        cleanup = tempfile.TemporaryDirectory(prefix="redec-run-")
        scratch = Path(cleanup.name)
    else:
        scratch = Path(scratch_dir)
        scratch.mkdir(parents=True, exist_ok=True)

    env = dict(os.environ)
    env["ASAN_OPTIONS"] = limits.asan_options
    popen_kwargs: dict = {}
    if limits.memory_bytes is not None:
        if resource is None:
            raise ExecError("memory_bytes limit requires a POSIX platform")
        popen_kwargs["preexec_fn"] = _rlimit_preexec(limits.memory_bytes)

    verdicts: list[TestVerdict] = []
    try:
        for j, case in enumerate(cases):
            case_dir = scratch / f"case{j}"
            case_dir.mkdir(exist_ok=True)
            try:
                proc = subprocess.run(
                    [str(binary)],
                    input=case.stdin_text.encode("utf-8"),
                    stdout=subprocess.PIPE,
                    stderr=subprocess.PIPE,
                    timeout=case.timeout_ms / 1000.0,
                    cwd=case_dir,
                    env=env,
                    **popen_kwargs,
                )
            except subprocess.TimeoutExpired as exc:
                partial = exc.stdout or b""
                verdicts.append(
                    TestVerdict(
                        case_index=j,
                        status=VerdictStatus.TIMEOUT,
                        actual_stdout=partial[: limits.stdout_cap_bytes].decode("utf-8", errors="replace"),
                    )
                )
                if stop_on_failure:
                    break
                continue
            except OSError as exc:
                raise ExecError(f"cannot spawn {binary}: {exc}") from exc

            stdout = proc.stdout[: limits.stdout_cap_bytes].decode("utf-8", errors="replace")
            stderr = proc.stderr.decode("utf-8", errors="replace")

            if has_sanitizer_banner(stderr):
                if report_path is not None:
                    (report_path / f"case{j}.asan.txt").write_text(stderr, encoding="utf-8")
                verdicts.append(
                    TestVerdict(
                        case_index=j,
                        status=VerdictStatus.SANITIZER_ABORT,
                        actual_stdout=stdout,
                        sanitizer=parse_sanitizer_report(stderr, code),
                        exit_code=proc.returncode,
                    )
                )
            elif proc.returncode < 0:
                verdicts.append(
                    TestVerdict(
                        case_index=j,
                        status=VerdictStatus.CRASH,
                        actual_stdout=stdout,
                        exit_code=proc.returncode,
                    )
                )
            elif compare_output(stdout, case.expected_stdout, case.compare_mode):
                verdicts.append(
                    TestVerdict(case_index=j, status=VerdictStatus.PASS, actual_stdout=stdout, exit_code=proc.returncode)
                )
            else:
                verdicts.append(
                    TestVerdict(
                        case_index=j,
                        status=VerdictStatus.OUTPUT_MISMATCH,
                        actual_stdout=stdout,
                        exit_code=proc.returncode,
                    )
                )
            if verdicts[-1].status is not VerdictStatus.PASS and stop_on_failure:
                break
    finally:
        if cleanup is not None:
            cleanup.cleanup()
    return verdicts
