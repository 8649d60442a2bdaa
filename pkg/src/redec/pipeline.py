"""Two-phase refinement orchestrator.

Per program: preprocessing rules, a token admission gate, then an iterative
compile-repair phase (compiler diagnostics drive the prompts) and a runtime
repair phase (sanitizer reports and failing test cases drive the prompts),
all under one unified query budget. Every intermediate prompt, response,
candidate, diagnostic and verdict is archived per iteration.
"""

from __future__ import annotations

import json
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from . import compilebox, llm
from .compilebox import CompileResult, CompileRequest, Diagnostic, Severity
from .config import PipelineConfig
from .corpus import ProgramEntry, estimate_tokens
from .errors import CompileTimeout, ContextOverflow, EmptyExtraction, UnbalancedBraces
from .metrics import OutcomeRecord
from .preprocess import Origin, SourceUnit, index_functions, preprocess_unit
from .runbox import TestVerdict, VerdictStatus, run_tests


class OutcomeStatus(Enum):
    FUNCTIONAL = "functional"
    COMPILED_BUT_FAILING = "compiled-but-failing"
    COMPILE_BUDGET_EXHAUSTED = "compile-budget-exhausted"
    INADMISSIBLE = "inadmissible"
    CONTEXT_OVERFLOW = "context-overflow"
    SANITIZER_UNFIXED = "sanitizer-unfixed"


@dataclass(frozen=True)
class RefinementOutcome:
    program_id: str
    status: OutcomeStatus
    queries_used: int
    success_at: int | None
    final_unit: SourceUnit
    transcript: llm.Transcript
    verdict_log: tuple[TestVerdict, ...]
    revert_count: int = 0
    history_truncations: int = 0
    sanitizer_triggered: int = 0
    sanitizer_fixed: int = 0

    def to_record(self) -> OutcomeRecord:
        return OutcomeRecord(
            program_id=self.program_id,
            status=self.status.value,
            queries_used=self.queries_used,
            success_at=self.success_at,
            revert_count=self.revert_count,
            history_truncations=self.history_truncations,
            sanitizer_triggered=self.sanitizer_triggered,
            sanitizer_fixed=self.sanitizer_fixed,
        )


def _nonempty_function_names(code: str) -> set[str] | None:
    try:
        records = index_functions(code)
    except UnbalancedBraces:
        return None
    return {r.name for r in records if not r.body_is_empty_or_missing}


class _Refiner:
    def __init__(
        self,
        entry: ProgramEntry,
        budget: int,
        backend: llm.CompletionBackend,
        config: PipelineConfig,
        run_dir: Path | None,
    ):
        if budget < 1:
            raise ValueError("budget must be >= 1")
        if not entry.test_cases:
            raise ValueError(f"entry {entry.id!r} has no test cases; refinement needs them")
        self.entry = entry
        self.budget = budget
        self.backend = backend
        self.config = config
        self.run_dir = run_dir
        self.transcript = llm.Transcript()
        self.queries = 0
        self.reverts = 0
        self.truncations = 0
        self.san_triggered = 0
        self.san_fixed = 0
        self._san_open: dict[int, bool] = {}
        self.verdict_log: list[TestVerdict] = []
        self.accepted: SourceUnit | None = None
        self.last_compile: CompileResult | None = None
        self.current_label = "preprocess"
        self.phase = "static"
        self.phase_queries = {"static": 0, "dynamic": 0}
        self._tmp: tempfile.TemporaryDirectory | None = None

    def _budget_left(self) -> bool:
        if self.queries >= self.budget:
            return False
        cap = self.config.static_budget if self.phase == "static" else self.config.dynamic_budget
        return cap is None or self.phase_queries[self.phase] < cap

    # ---- archive helpers -------------------------------------------------

    def _root(self) -> Path:
        if self.run_dir is not None:
            root = self.run_dir / self.entry.id
        else:
            if self._tmp is None:
                self._tmp = tempfile.TemporaryDirectory(prefix="redec-refine-")
            root = Path(self._tmp.name)
        root.mkdir(parents=True, exist_ok=True)
        return root

    def _dir(self, label: str) -> Path:
        d = self._root() / label
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _write(self, label: str, name: str, text: str) -> None:
        (self._dir(label) / name).write_text(text, encoding="utf-8")

    # ---- building blocks -------------------------------------------------

    def _compile_accepted(self, sanitize: bool) -> CompileResult:
        assert self.accepted is not None
        label = self.current_label
        workdir = self._dir(label) / ("sanitized" if sanitize else "build")
        req = CompileRequest(unit=self.accepted, workdir=workdir, sanitize=sanitize)
        try:
            result = compilebox.compile(req, self.config.compiler)
        except CompileTimeout:
            limit = self.config.compiler.timeout_ms
            result = CompileResult(
                success=False,
                binary_path=None,
                diagnostics=(
                    Diagnostic(Severity.ERROR, f"compilation timed out after {limit} ms"),
                ),
                raw_stderr=f"compilation timed out after {limit} ms",
                duration_ms=limit,
            )
        suffix = "compile-sanitized.txt" if sanitize else "compile.txt"
        status_line = "success" if result.success else "failure"
        self._write(label, suffix, status_line + "\n" + result.raw_stderr)
        return result

    def _compile_error_text(self) -> str:
        assert self.last_compile is not None
        text = compilebox.render_error_context(
            self.last_compile.diagnostics,
            self.accepted.code,
            self.config.context_lines,
            self.config.max_error_chars,
        )
        if not text:
            fallback = compilebox.normalize_message(self.last_compile.raw_stderr).strip()
            text = fallback[: self.config.max_error_chars] or "compilation failed"
        return text

    def _compile_error_prompt(self) -> llm.ChatMessage:
        return llm.render_prompt(
            llm.PromptKind.COMPILE_ERROR,
            {"compiler_error": self._compile_error_text(), "pseudocode": self.accepted.code},
        )

    def _failure_prompt(self, verdict: TestVerdict) -> llm.ChatMessage:
        code = self.accepted.code
        if verdict.status is VerdictStatus.SANITIZER_ABORT:
            report = verdict.sanitizer
            return llm.render_prompt(
                llm.PromptKind.SANITIZER_ERROR,
                {
                    "type_of_memory_corruption": report.kind,
                    "statement": report.faulting_statement or "[unresolved statement]",
                    "pseudocode": code,
                },
            )
        case = self.entry.test_cases[verdict.case_index]
        if verdict.status is VerdictStatus.CRASH:
            # Not covered by the prompt table; reuse the output template with a
            # bracketed description so the prompt set stays closed.
            wrong = f"[program crashed with signal {-(verdict.exit_code or 0)}]"
        elif verdict.status is VerdictStatus.TIMEOUT:
            wrong = "[program timed out]"
        else:
            wrong = verdict.actual_stdout
        return llm.render_prompt(
            llm.PromptKind.OUTPUT_ERROR,
            {
                "expected_input": case.stdin_text,
                "expected_output": case.expected_stdout,
                "wrong_output": wrong,
                "pseudocode": code,
            },
        )

    def _query_candidate(self, prompt: llm.ChatMessage) -> SourceUnit | None:
        """One budgeted query: send prompt, post-process, run the strip guard.

        Returns the accepted candidate, or None when the iteration failed
        (nothing code-like extracted, or the candidate dropped a function body
        and was reverted). Failed iterations still consume budget; the
        transcript keeps the failed attempt so the model sees its own mistake.
        """
        estimator = estimate_tokens
        history = sum(estimator(m.content) for m in self.transcript.messages)
        if history + estimator(prompt.content) >= self.config.llm.context_limit and self.queries > 0:
            self.transcript.restart()
            self.truncations += 1
        self.transcript.append_user(prompt.content)
        reply = llm.complete(self.transcript, self.backend, program_id=self.entry.id)
        self.transcript.append_assistant(reply.content)
        self.queries += 1
        self.phase_queries[self.phase] += 1
        label = f"iter{self.queries}"
        self._write(label, "prompt.txt", prompt.content)
        self._write(label, "response.txt", reply.content)

        try:
            code = llm.extract_code(reply.content)
        except EmptyExtraction:
            self._write(label, "event.json", json.dumps({"event": "empty-extraction"}) + "\n")
            return None

        previous = _nonempty_function_names(self.accepted.code)
        if previous:
            candidate_names = _nonempty_function_names(code)
            stripped = (
                sorted(previous - candidate_names) if candidate_names is not None else sorted(previous)
            )
            if stripped:
                self.reverts += 1
                self._write(
                    label,
                    "event.json",
                    json.dumps({"event": "reverted", "stripped_functions": stripped}) + "\n",
                )
                return None

        unit = SourceUnit(self.entry.id, code, Origin.LLM, iteration=self.queries)
        self._write(label, "candidate.c", code)
        self._write(label, "event.json", json.dumps({"event": "accepted"}) + "\n")
        self.accepted = unit
        self.current_label = label
        return unit

    def _record_verdicts(self, verdicts: list[TestVerdict]) -> None:
        self.verdict_log.extend(verdicts)
        for v in verdicts:
            was_open = self._san_open.get(v.case_index, False)
            if v.status is VerdictStatus.SANITIZER_ABORT:
                if not was_open:
                    self.san_triggered += 1
                    self._san_open[v.case_index] = True
            elif was_open:
                self.san_fixed += 1
                self._san_open[v.case_index] = False
        payload = [
            {
                "case_index": v.case_index,
                "status": v.status.value,
                "exit_code": v.exit_code,
                "actual_stdout": v.actual_stdout[:4096],
                "sanitizer_kind": v.sanitizer.kind if v.sanitizer else None,
            }
            for v in verdicts
        ]
        self._write(self.current_label, "verdicts.json", json.dumps(payload, indent=2) + "\n")

    def _run_suite(self) -> list[TestVerdict]:
        assert self.last_compile is not None and self.last_compile.binary_path is not None
        verdicts = run_tests(
            self.last_compile.binary_path,
            self.entry.test_cases,
            limits=self.config.limits,
            code=self.accepted.code,
            report_dir=self._dir(self.current_label),
        )
        self._record_verdicts(verdicts)
        return verdicts

    def _outcome(self, status: OutcomeStatus, success_at: int | None = None) -> RefinementOutcome:
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None
        return RefinementOutcome(
            program_id=self.entry.id,
            status=status,
            queries_used=self.queries,
            success_at=success_at,
            final_unit=self.accepted,
            transcript=self.transcript,
            verdict_log=tuple(self.verdict_log),
            revert_count=self.reverts,
            history_truncations=self.truncations,
            sanitizer_triggered=self.san_triggered,
            sanitizer_fixed=self.san_fixed,
        )

    # ---- phases ------------------------------------------------------------

    def run(self) -> RefinementOutcome:
        raw = SourceUnit(self.entry.id, self.entry.pseudocode_text, Origin.DECOMPILER)
        self.accepted = preprocess_unit(raw, self.config.rules)
        self._write("preprocess", "candidate.c", self.accepted.code)

        if not llm.admit(self.accepted, self.config.system_prompt, self.config.llm.context_limit):
            return self._outcome(OutcomeStatus.INADMISSIBLE)
        self.transcript.set_system(self.config.system_prompt)

        try:
            result = self._compile_accepted(sanitize=False)
            self.last_compile = result
            if result.success and not self.config.always_refine:
                return self._dynamic_phase()
            return self._static_phase()
        except ContextOverflow:
            return self._outcome(OutcomeStatus.CONTEXT_OVERFLOW)

    def _static_phase(self) -> RefinementOutcome:
        while self._budget_left():
            if self.queries == 0:
                prompt = llm.render_prompt(
                    llm.PromptKind.INITIAL, {"pseudocode": self.accepted.code}
                )
            else:
                prompt = self._compile_error_prompt()
            candidate = self._query_candidate(prompt)
            if candidate is None:
                continue
            result = self._compile_accepted(sanitize=False)
            self.last_compile = result
            if result.success:
                return self._dynamic_phase()
        return self._outcome(OutcomeStatus.COMPILE_BUDGET_EXHAUSTED)

    def _ensure_sanitized(self) -> bool:
        """Compile the accepted unit with sanitizer instrumentation, prompting
        through compile errors if needed. False when the budget ran out."""
        result = self._compile_accepted(sanitize=True)
        self.last_compile = result
        while not result.success:
            if not self._budget_left():
                return False
            candidate = self._query_candidate(self._compile_error_prompt())
            if candidate is None:
                continue
            result = self._compile_accepted(sanitize=True)
            self.last_compile = result
        return True

    def _dynamic_phase(self) -> RefinementOutcome:
        self.phase = "dynamic"
        if not self._ensure_sanitized():
            return self._outcome(OutcomeStatus.COMPILE_BUDGET_EXHAUSTED)
        last_fail: TestVerdict | None = None
        need_test = True
        while True:
            if need_test:
                verdicts = self._run_suite()
                if len(verdicts) == len(self.entry.test_cases) and all(
                    v.status is VerdictStatus.PASS for v in verdicts
                ):
                    return self._outcome(OutcomeStatus.FUNCTIONAL, success_at=self.queries)
                last_fail = verdicts[-1]
                need_test = False
            if not self._budget_left():
                if last_fail is not None and last_fail.status is VerdictStatus.SANITIZER_ABORT:
                    return self._outcome(OutcomeStatus.SANITIZER_UNFIXED)
                return self._outcome(OutcomeStatus.COMPILED_BUT_FAILING)
            candidate = self._query_candidate(self._failure_prompt(last_fail))
            if candidate is None:
                continue
            if not self._ensure_sanitized():
                return self._outcome(OutcomeStatus.COMPILE_BUDGET_EXHAUSTED)
            need_test = True


def refine(
    entry: ProgramEntry,
    budget: int,
    backend: llm.CompletionBackend,
    config: PipelineConfig,
    run_dir: str | Path | None = None,
) -> RefinementOutcome:
    """Refine one program to Functional status or a terminal failure status."""
    return _Refiner(entry, budget, backend, config, Path(run_dir) if run_dir else None).run()


def refine_all(
    entries: Sequence[ProgramEntry],
    budget: int,
    backend: llm.CompletionBackend,
    config: PipelineConfig,
    run_dir: str | Path | None = None,
    jobs: int = 1,
    on_outcome=None,
) -> list[RefinementOutcome]:
    """Refine independent programs, optionally with a thread worker pool.

    Results come back in manifest order regardless of completion order, so
    downstream records are deterministic. `on_outcome` fires as each program
    finishes; callers use it to flush records if the run is interrupted.
    """

    def _run(entry: ProgramEntry) -> RefinementOutcome:
        outcome = refine(entry, budget, backend, config, run_dir)
        if on_outcome is not None:
            on_outcome(outcome)
        return outcome

    if jobs <= 1 or len(entries) <= 1:
        return [_run(e) for e in entries]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        try:
            futures = [pool.submit(_run, e) for e in entries]
            return [f.result() for f in futures]
        except BaseException:
            pool.shutdown(wait=True, cancel_futures=True)
            raise
