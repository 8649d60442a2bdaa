"""External compiler invocation and diagnostic normalization.

Candidate sources are written to a standardized file name inside an isolated
workdir, compiled with configurable flags, and the stderr stream is parsed
into structured diagnostics with file paths scrubbed out.
"""

from __future__ import annotations

import re
import shutil
import subprocess
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .errors import CompilerNotFound, CompileTimeout, WorkdirError
from .preprocess import SourceUnit

SOURCE_FILENAME = "unit.cpp"
BINARY_FILENAME = "unit.bin"
TRUNCATION_MARKER = "\n...[truncated]"


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"
    NOTE = "note"


@dataclass(frozen=True)
class CompilerConfig:
    path: str = "g++"
    base_flags: tuple[str, ...] = ("-std=c++17", "-Wall", "-O0")
    sanitize_flags: tuple[str, ...] = ("-fsanitize=address", "-fno-omit-frame-pointer", "-g")
    timeout_ms: int = 60_000


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    message: str  # normalized: never contains absolute file paths
    line: int | None = None
    column: int | None = None
    excerpt: str | None = None
    structured: bool = True


@dataclass(frozen=True)
class CompileRequest:
    unit: SourceUnit
    workdir: Path
    sanitize: bool = False
    extra_flags: tuple[str, ...] = ()
    time_limit_ms: int | None = None

    def __post_init__(self):
        if self.time_limit_ms is not None and self.time_limit_ms <= 0:
            raise ValueError("time_limit_ms must be positive")


@dataclass(frozen=True)
class CompileResult:
    success: bool
    binary_path: Path | None
    diagnostics: tuple[Diagnostic, ...]
    raw_stderr: str
    duration_ms: int

    def errors(self) -> tuple[Diagnostic, ...]:
        return tuple(d for d in self.diagnostics if d.severity is Severity.ERROR)


# Absolute or multi-segment paths are reduced to their basename so prompts and
# golden assertions never see the randomized workdir prefix.
_PATH_RE = re.compile(r"(?<![\w.])/(?:[^/\s:'\"`,;()\[\]]+/)+[^/\s:'\"`,;()\[\]]+")

_DIAG_RE = re.compile(
    r"^(?P<file>[^:\n]+):(?P<line>\d+):(?:(?P<col>\d+):)?\s*"
    r"(?P<sev>fatal error|error|warning|note):\s*(?P<msg>.*)$"
)
_TOOL_DIAG_RE = re.compile(
    r"^(?P<tool>[\w./+-]+):\s*(?P<sev>fatal error|error|warning|note):\s*(?P<msg>.*)$"
)

_SEVERITY = {
    "fatal error": Severity.ERROR,
    "error": Severity.ERROR,
    "warning": Severity.WARNING,
    "note": Severity.NOTE,
}


def normalize_message(text: str) -> str:
    """Replace any path-like token with its basename."""
    return _PATH_RE.sub(lambda m: m.group(0).rsplit("/", 1)[-1], text)


def parse_diagnostics(raw_stderr: str) -> tuple[Diagnostic, ...]:
    """Parse gcc/clang-style stderr into normalized Diagnostic records.

    `file:line[:col]: severity: message` lines start a diagnostic; note lines
    and unrecognized lines (source echoes, carets, include traces) fold into
    the nearest preceding diagnostic as continuation text. Unrecognized lines
    with no preceding diagnostic are preserved verbatim as unstructured notes.
    The parser is total: any input yields a (possibly empty) sequence.
    """
    diags: list[Diagnostic] = []
    open_continuation: list[int] = []  # index of diagnostic accepting continuations

    def fold(index: int, text: str) -> None:
        d = diags[index]
        diags[index] = Diagnostic(
            severity=d.severity,
            message=d.message + "\n" + text,
            line=d.line,
            column=d.column,
            excerpt=d.excerpt,
            structured=d.structured,
        )

    for line in raw_stderr.splitlines():
        if not line.strip():
            continue
        m = _DIAG_RE.match(line)
        if m:
            sev = _SEVERITY[m.group("sev")]
            msg = normalize_message(m.group("msg"))
            if sev is Severity.NOTE and diags and diags[-1].structured:
                fold(len(diags) - 1, "note: " + msg)
                continue
            diags.append(
                Diagnostic(
                    severity=sev,
                    message=msg,
                    line=int(m.group("line")),
                    column=int(m.group("col")) if m.group("col") else None,
                )
            )
            open_continuation[:] = [len(diags) - 1]
            continue
        m = _TOOL_DIAG_RE.match(line)
        if m:
            diags.append(
                Diagnostic(severity=_SEVERITY[m.group("sev")], message=normalize_message(m.group("msg")))
            )
            open_continuation[:] = [len(diags) - 1]
            continue
        if open_continuation:
            fold(open_continuation[0], normalize_message(line))
        else:
            diags.append(
                Diagnostic(severity=Severity.NOTE, message=normalize_message(line), structured=False)
            )
    return tuple(diags)


def _attach_excerpts(diags: tuple[Diagnostic, ...], code: str) -> tuple[Diagnostic, ...]:
    lines = code.split("\n")
    out = []
    for d in diags:
        if d.line is not None and 1 <= d.line <= len(lines) and d.excerpt is None:
            out.append(
                Diagnostic(d.severity, d.message, d.line, d.column, lines[d.line - 1], d.structured)
            )
        else:
            out.append(d)
    return tuple(out)


def compile(req: CompileRequest, config: CompilerConfig = CompilerConfig()) -> CompileResult:
    """Write the unit to its workdir and invoke the configured compiler.

    Never modifies the input unit. Raises CompilerNotFound / WorkdirError /
    CompileTimeout for infrastructure-level failures; ordinary compile errors
    come back as diagnostics on an unsuccessful result.
    """
    compiler = shutil.which(config.path)
    if compiler is None:
        raise CompilerNotFound(f"compiler not found: {config.path}")
    # Absolute paths throughout: the compiler runs with cwd=workdir, which
    # would double-resolve a relative workdir.
    workdir = Path(req.workdir).resolve()
    try:
        workdir.mkdir(parents=True, exist_ok=True)
        src = workdir / SOURCE_FILENAME
        src.write_text(req.unit.code, encoding="utf-8")
    except OSError as exc:
        raise WorkdirError(f"cannot prepare workdir {workdir}: {exc}") from exc

    binary = workdir / BINARY_FILENAME
    cmd = [compiler, *config.base_flags]
    if req.sanitize:
        cmd += list(config.sanitize_flags)
    cmd += [*req.extra_flags, str(src), "-o", str(binary)]

    limit_ms = req.time_limit_ms if req.time_limit_ms is not None else config.timeout_ms
    start = time.monotonic()
    try:
        proc = subprocess.run(
            cmd,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            timeout=limit_ms / 1000.0,
            cwd=workdir,
        )
    except subprocess.TimeoutExpired:
        raise CompileTimeout(f"compilation exceeded {limit_ms} ms") from None
    duration_ms = int((time.monotonic() - start) * 1000)

    raw_stderr = proc.stderr.decode("utf-8", errors="replace")
    diagnostics = _attach_excerpts(parse_diagnostics(raw_stderr), req.unit.code)
    success = proc.returncode == 0 and binary.is_file()
    if not success and not diagnostics and not raw_stderr:
        diagnostics = (
            Diagnostic(Severity.ERROR, f"compiler exited with status {proc.returncode} and no output"),
        )
    if success:
        binary.chmod(binary.stat().st_mode | 0o111)
    return CompileResult(
        success=success,
        binary_path=binary if success else None,
        diagnostics=diagnostics,
        raw_stderr=raw_stderr,
        duration_ms=duration_ms,
    )


def render_error_context(
    diags: Sequence[Diagnostic],
    code: str,
    context_lines: int = 2,
    max_chars: int = 4000,
) -> str:
    """Render Error diagnostics plus offending source lines for a repair prompt.

    Warnings and notes are excluded; only errors drive the repair loop. Output
    is deterministic (sorted by line, column, message) and hard-capped at
    max_chars with a trailing truncation marker.
    """
    if max_chars <= len(TRUNCATION_MARKER):
        raise ValueError("max_chars too small for the truncation marker")
    errors = [d for d in diags if d.severity is Severity.ERROR]
    errors.sort(key=lambda d: (d.line if d.line is not None else 1 << 31, d.column or 0, d.message))
    lines = code.split("\n")
    blocks = []
    for d in errors:
        block = "error: " + d.message
        if d.line is not None and 1 <= d.line <= len(lines):
            lo = max(1, d.line - context_lines)
            hi = min(len(lines), d.line + context_lines)
            block += "\n" + "\n".join(lines[i - 1] for i in range(lo, hi + 1))
        blocks.append(block)
    out = "\n\n".join(blocks)
    if len(out) > max_chars:
        out = out[: max_chars - len(TRUNCATION_MARKER)] + TRUNCATION_MARKER
    return out
