import json

import pytest

from redec.config import PipelineConfig
from redec.corpus import ProgramEntry, TestCase, estimate_tokens
from redec.llm import Role
from redec.metrics import aggregate
from redec.pipeline import OutcomeStatus, refine, refine_all
from redec.preprocess import index_functions

from conftest import requires_compiler

pytestmark = requires_compiler

CONFIG = PipelineConfig()


def make_entry(tmp_path, entry_id, code, tests, hint=None) -> ProgramEntry:
    path = tmp_path / f"{entry_id}.c"
    path.write_text(code)
    return ProgramEntry(
        id=entry_id,
        pseudocode_path=path,
        test_cases=tuple(tests),
        source_tokens=estimate_tokens(code),
        header_hint=hint,
        pseudocode_text=code,
    )


class ScriptedBackend:
    """In-memory completion backend: pops responses in order, optionally cycling."""

    def __init__(self, responses, cycle=False):
        self.responses = list(responses)
        self.cycle = cycle
        self.calls = 0

    def complete(self, messages, program_id=""):
        self.calls += 1
        if not self.responses:
            raise AssertionError("scripted backend exhausted")
        if self.cycle:
            response = self.responses[(self.calls - 1) % len(self.responses)]
        else:
            response = self.responses.pop(0)
        return response


BROKEN_NO_INCLUDE = (
    "int main(int argc, char **argv)\n{\n  int v;\n  scanf(\"%d\", &v);\n  printf(\"%d\\n\", v + 1);\n  return 0;\n}\n"
)

FIXED_INCLUDE = (
    "```cpp\n#include <cstdio>\nint main(int argc, char **argv)\n{\n  int v;\n"
    "  scanf(\"%d\", &v);\n  printf(\"%d\\n\", v + 1);\n  return 0;\n}\n```\n"
)


def test_happy_path_single_query(tmp_path):
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    outcome = refine(entry, budget=5, backend=ScriptedBackend([FIXED_INCLUDE]), config=CONFIG)
    assert outcome.status is OutcomeStatus.FUNCTIONAL
    assert outcome.queries_used == 1
    assert outcome.success_at == 1
    roles = [m.role for m in outcome.transcript.messages]
    assert roles == [Role.SYSTEM, Role.USER, Role.ASSISTANT]
    # The initial prompt is the fenced preprocessed pseudocode, nothing else.
    assert outcome.transcript.messages[1].content.startswith("```cpp\n")


def test_compile_fix_then_output_fix(tmp_path):
    wrong_logic = (
        "```cpp\n#include <cstdio>\nint main(int argc, char **argv)\n{\n  int v;\n"
        "  scanf(\"%d\", &v);\n  printf(\"%d\\n\", v - 1);\n  return 0;\n}\n```\n"
    )
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    outcome = refine(entry, budget=5, backend=ScriptedBackend([wrong_logic, FIXED_INCLUDE]), config=CONFIG)
    assert outcome.status is OutcomeStatus.FUNCTIONAL
    assert outcome.queries_used == 2
    assert outcome.success_at == 2
    user_messages = [m.content for m in outcome.transcript.messages if m.role is Role.USER]
    assert user_messages[0].startswith("```cpp\n")
    assert user_messages[1].startswith("The expected output of the program for input:")


@pytest.mark.parametrize("budget", [1, 5, 15])
def test_budget_bound_exact(tmp_path, budget):
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    backend = ScriptedBackend(["```cpp\nint broken(\n```"], cycle=True)
    outcome = refine(entry, budget=budget, backend=backend, config=CONFIG)
    assert outcome.status is OutcomeStatus.COMPILE_BUDGET_EXHAUSTED
    assert outcome.queries_used == budget
    assert outcome.transcript.total_queries == budget
    assert outcome.success_at is None


STRIPPER_INPUT = (
    "int helper(int a)\n{\n  return a * 2;\n}\n\n"
    "int main(int argc, char **argv)\n{\n  int v;\n  scanf(\"%d\", &v);\n"
    "  printf(\"%d\\n\", helper(v));\n  return 0;\n}\n"
)

STRIPPING_RESPONSE = (
    "```cpp\n#include <cstdio>\nint helper(int a);\n\n"
    "int main(int argc, char **argv)\n{\n  int v;\n  scanf(\"%d\", &v);\n"
    "  printf(\"%d\\n\", helper(v));\n  return 0;\n}\n```\n"
)

FULL_RESPONSE = (
    "```cpp\n#include <cstdio>\nint helper(int a)\n{\n  return a * 2;\n}\n\n"
    "int main(int argc, char **argv)\n{\n  int v;\n  scanf(\"%d\", &v);\n"
    "  printf(\"%d\\n\", helper(v));\n  return 0;\n}\n```\n"
)


def test_strip_guard_reverts_and_logs(tmp_path):
    entry = make_entry(tmp_path, "p", STRIPPER_INPUT, [TestCase("3\n", "6\n")])
    run_dir = tmp_path / "run"
    backend = ScriptedBackend([STRIPPING_RESPONSE, FULL_RESPONSE])
    outcome = refine(entry, budget=5, backend=backend, config=CONFIG, run_dir=run_dir)
    assert outcome.status is OutcomeStatus.FUNCTIONAL
    assert outcome.revert_count == 1
    assert outcome.queries_used == 2
    # The accepted unit never lost helper's nonempty body.
    records = {r.name: r for r in index_functions(outcome.final_unit.code)}
    assert "helper" in records and not records["helper"].body_is_empty_or_missing
    event = json.loads((run_dir / "p" / "iter1" / "event.json").read_text())
    assert event["event"] == "reverted"
    assert event["stripped_functions"] == ["helper"]


def test_strip_guard_soundness_across_adversarial_runs(tmp_path):
    entry = make_entry(tmp_path, "p", STRIPPER_INPUT, [TestCase("3\n", "6\n")])
    backend = ScriptedBackend([STRIPPING_RESPONSE], cycle=True)
    outcome = refine(entry, budget=4, backend=backend, config=CONFIG)
    assert outcome.revert_count == 4
    names = {r.name for r in index_functions(outcome.final_unit.code) if not r.body_is_empty_or_missing}
    assert {"helper", "main"} <= names


def test_empty_extraction_consumes_budget_and_recovers(tmp_path):
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    backend = ScriptedBackend(["I cannot see any problem with this code.", FIXED_INCLUDE])
    outcome = refine(entry, budget=5, backend=backend, config=CONFIG)
    assert outcome.status is OutcomeStatus.FUNCTIONAL
    assert outcome.queries_used == 2
    assert outcome.revert_count == 0


OVERFLOW_INPUT = (
    "#include <cstdio>\n#include <cstdlib>\n"
    "int main(int argc, char **argv)\n{\n  int n;\n  if ( scanf(\"%d\", &n) != 1 )\n    return 1;\n"
    "  int *buf = (int *)malloc(4 * n);\n  for ( int i = 0; i <= n; ++i )\n    buf[i] = i;\n"
    "  int s = 0;\n  for ( int i = 0; i < n; ++i )\n    s += buf[i];\n"
    "  printf(\"%d\\n\", s);\n  free(buf);\n  return 0;\n}\n"
)

OVERFLOW_FIX = (
    "```cpp\n#include <cstdio>\n#include <cstdlib>\n"
    "int main(int argc, char **argv)\n{\n  int n;\n  if ( scanf(\"%d\", &n) != 1 )\n    return 1;\n"
    "  int *buf = (int *)malloc(4 * n);\n  for ( int i = 0; i < n; ++i )\n    buf[i] = i;\n"
    "  int s = 0;\n  for ( int i = 0; i < n; ++i )\n    s += buf[i];\n"
    "  printf(\"%d\\n\", s);\n  free(buf);\n  return 0;\n}\n```\n"
)


def test_sanitizer_prompt_contains_kind_and_statement(tmp_path):
    entry = make_entry(tmp_path, "p", OVERFLOW_INPUT, [TestCase("3\n", "3\n")])
    backend = ScriptedBackend([OVERFLOW_FIX])
    outcome = refine(entry, budget=5, backend=backend, config=CONFIG)
    assert outcome.status is OutcomeStatus.FUNCTIONAL
    assert outcome.sanitizer_triggered == 1
    assert outcome.sanitizer_fixed == 1
    prompt = [m.content for m in outcome.transcript.messages if m.role is Role.USER][0]
    assert prompt.startswith("Please fix the heap-buffer-overflow triggered in buf[i] = i;")


CRASH_INPUT = (
    "#include <cstdio>\n#include <cstdlib>\n"
    "int main(int argc, char **argv)\n{\n  int v;\n  if ( scanf(\"%d\", &v) != 1 )\n    abort();\n"
    "  if ( v > 2 )\n    abort();\n  printf(\"%d\\n\", v);\n  return 0;\n}\n"
)

CRASH_FIX = (
    "```cpp\n#include <cstdio>\n"
    "int main(int argc, char **argv)\n{\n  int v;\n  if ( scanf(\"%d\", &v) != 1 )\n    return 1;\n"
    "  printf(\"%d\\n\", v);\n  return 0;\n}\n```\n"
)


def test_crash_reuses_output_template_with_bracketed_text(tmp_path):
    entry = make_entry(tmp_path, "p", CRASH_INPUT, [TestCase("7\n", "7\n")])
    outcome = refine(entry, budget=5, backend=ScriptedBackend([CRASH_FIX]), config=CONFIG)
    assert outcome.status is OutcomeStatus.FUNCTIONAL
    prompt = [m.content for m in outcome.transcript.messages if m.role is Role.USER][0]
    assert "[program crashed with signal 6]" in prompt
    assert "but we got [program crashed with signal 6]." in prompt


SPIN_INPUT = (
    "#include <cstdio>\n"
    "int main(int argc, char **argv)\n{\n  int v;\n  if ( scanf(\"%d\", &v) != 1 )\n    return 1;\n"
    "  while ( v > 0 ) { }\n  printf(\"%d\\n\", v);\n  return 0;\n}\n"
)

SPIN_FIX = (
    "```cpp\n#include <cstdio>\n"
    "int main(int argc, char **argv)\n{\n  int v;\n  if ( scanf(\"%d\", &v) != 1 )\n    return 1;\n"
    "  printf(\"%d\\n\", v);\n  return 0;\n}\n```\n"
)


def test_timeout_reuses_output_template(tmp_path):
    entry = make_entry(tmp_path, "p", SPIN_INPUT, [TestCase("5\n", "5\n", timeout_ms=200)])
    outcome = refine(entry, budget=5, backend=ScriptedBackend([SPIN_FIX]), config=CONFIG)
    assert outcome.status is OutcomeStatus.FUNCTIONAL
    prompt = [m.content for m in outcome.transcript.messages if m.role is Role.USER][0]
    assert "[program timed out]" in prompt


def test_dynamic_recompile_failure_falls_back_to_compile_prompting(tmp_path):
    wrong_output = (
        "```cpp\n#include <cstdio>\nint main(int argc, char **argv)\n{\n  int v;\n"
        "  scanf(\"%d\", &v);\n  printf(\"%d\\n\", v - 1);\n  return 0;\n}\n```\n"
    )
    broken_candidate = (
        "```cpp\n#include <cstdio>\nint main(int argc, char **argv)\n{\n  int v;\n"
        "  scanf(\"%d\", &v);\n  printf(\"%d\\n\", undeclared_helper(v));\n  return 0;\n}\n```\n"
    )
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    backend = ScriptedBackend([wrong_output, broken_candidate, FIXED_INCLUDE])
    outcome = refine(entry, budget=5, backend=backend, config=CONFIG)
    assert outcome.status is OutcomeStatus.FUNCTIONAL
    assert outcome.queries_used == 3
    users = [m.content for m in outcome.transcript.messages if m.role is Role.USER]
    assert users[1].startswith("The expected output of the program")
    assert users[2].startswith("Please fix the following compilation errors")


def test_archive_layout_monotone(tmp_path):
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    run_dir = tmp_path / "run"
    backend = ScriptedBackend(["garbage prose response", "```cpp\nstill broken(\n```", FIXED_INCLUDE])
    outcome = refine(entry, budget=5, backend=backend, config=CONFIG, run_dir=run_dir)
    assert outcome.queries_used == 3
    for k in range(1, outcome.queries_used + 1):
        iter_dir = run_dir / "p" / f"iter{k}"
        assert iter_dir.is_dir()
        assert (iter_dir / "prompt.txt").is_file()
        assert (iter_dir / "response.txt").is_file()
    assert (run_dir / "p" / "preprocess" / "candidate.c").is_file()
    assert (run_dir / "p" / "iter3" / "verdicts.json").is_file()


def test_deterministic_outcomes_under_replay(tmp_path):
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    outcomes = [
        refine(entry, budget=5, backend=ScriptedBackend([FIXED_INCLUDE]), config=CONFIG)
        for _ in range(2)
    ]
    first, second = (o.to_record() for o in outcomes)
    assert first == second
    assert outcomes[0].final_unit.code == outcomes[1].final_unit.code


def test_inadmissible_unit_uses_zero_queries(tmp_path):
    big = "int x;\n" * 2000  # ~14000 bytes >> half of 4096-token budget
    entry = make_entry(tmp_path, "p", big, [TestCase("", "")])
    outcome = refine(entry, budget=5, backend=ScriptedBackend([]), config=CONFIG)
    assert outcome.status is OutcomeStatus.INADMISSIBLE
    assert outcome.queries_used == 0
    assert outcome.transcript.messages == ()


def test_zero_query_functional_when_preprocessing_suffices(tmp_path):
    code = "#include <cstdio>\nint main() { printf(\"ok\\n\"); return 0; }\n"
    entry = make_entry(tmp_path, "p", code, [TestCase("", "ok\n")])
    outcome = refine(entry, budget=5, backend=ScriptedBackend([]), config=CONFIG)
    assert outcome.status is OutcomeStatus.FUNCTIONAL
    assert outcome.queries_used == 0
    assert outcome.success_at == 0


def test_history_truncation_restarts_conversation(tmp_path):
    from dataclasses import replace

    tiny = replace(CONFIG, llm=replace(CONFIG.llm, context_limit=220))
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    backend = ScriptedBackend(["```cpp\nstill broken(\n```", "```cpp\nnope(\n```", FIXED_INCLUDE])
    outcome = refine(entry, budget=5, backend=backend, config=tiny)
    assert outcome.status is OutcomeStatus.FUNCTIONAL
    assert outcome.history_truncations >= 1


def test_entry_without_tests_rejected(tmp_path):
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [])
    with pytest.raises(ValueError, match="test cases"):
        refine(entry, budget=5, backend=ScriptedBackend([]), config=CONFIG)


def test_budget_safety_against_adversarial_response_mix(tmp_path):
    adversarial = [
        "no code here at all, just words.",
        STRIPPING_RESPONSE,
        "```cpp\nint broken(\n```",
        "```cpp\n}}}}\n```",
    ]
    entry = make_entry(tmp_path, "p", STRIPPER_INPUT, [TestCase("3\n", "6\n")])
    for budget in (1, 2, 3, 6):
        backend = ScriptedBackend(adversarial, cycle=True)
        outcome = refine(entry, budget=budget, backend=backend, config=CONFIG)
        assert outcome.transcript.total_queries <= budget
        assert outcome.queries_used == budget
        assert outcome.status is OutcomeStatus.COMPILE_BUDGET_EXHAUSTED


def test_success_at_consistent_with_metrics_recount(tmp_path):
    entries = [
        make_entry(tmp_path, "a", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")]),
        make_entry(tmp_path, "b", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")]),
    ]
    backends = {
        "a": ScriptedBackend([FIXED_INCLUDE]),
        "b": ScriptedBackend(["```cpp\nbroken(\n```"], cycle=True),
    }

    class Router:
        def complete(self, messages, program_id=""):
            return backends[program_id].complete(messages, program_id)

    outcomes = refine_all(entries, budget=3, backend=Router(), config=CONFIG)
    report = aggregate(outcomes, entries, thresholds=(1, 2, 3))
    for c, stat in report.success_at_c.items():
        manual = sum(1 for o in outcomes if o.success_at is not None and o.success_at <= c)
        assert stat.count == manual


def test_sanitizer_unfixed_status_at_budget_exhaustion(tmp_path):
    entry = make_entry(tmp_path, "p", OVERFLOW_INPUT, [TestCase("3\n", "3\n")])
    overflow_again = "```cpp\n" + OVERFLOW_INPUT + "```"
    backend = ScriptedBackend([overflow_again], cycle=True)
    outcome = refine(entry, budget=2, backend=backend, config=CONFIG)
    assert outcome.status is OutcomeStatus.SANITIZER_UNFIXED
    assert outcome.queries_used == 2
    assert outcome.sanitizer_triggered >= 1
    assert outcome.sanitizer_fixed == 0


def test_compiled_but_failing_status_at_budget_exhaustion(tmp_path):
    wrong = (
        "#include <cstdio>\nint main(int argc, char **argv)\n{\n  int v;\n"
        "  scanf(\"%d\", &v);\n  printf(\"%d\\n\", v - 1);\n  return 0;\n}\n"
    )
    entry = make_entry(tmp_path, "p", wrong, [TestCase("1\n", "2\n")])
    backend = ScriptedBackend(["```cpp\n" + wrong + "```"], cycle=True)
    outcome = refine(entry, budget=2, backend=backend, config=CONFIG)
    assert outcome.status is OutcomeStatus.COMPILED_BUT_FAILING
    assert outcome.queries_used == 2
    assert outcome.success_at is None


def test_context_overflow_is_terminal_status(tmp_path):
    from redec.errors import ContextOverflow

    class OverflowBackend:
        def complete(self, messages, program_id=""):
            raise ContextOverflow("too long for the model")

    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    outcome = refine(entry, budget=5, backend=OverflowBackend(), config=CONFIG)
    assert outcome.status is OutcomeStatus.CONTEXT_OVERFLOW
    assert outcome.success_at is None


def test_static_phase_budget_cap(tmp_path):
    from dataclasses import replace

    capped = replace(CONFIG, static_budget=2)
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    backend = ScriptedBackend(["```cpp\nbroken(\n```"], cycle=True)
    outcome = refine(entry, budget=10, backend=backend, config=capped)
    assert outcome.status is OutcomeStatus.COMPILE_BUDGET_EXHAUSTED
    assert outcome.queries_used == 2


def test_dynamic_phase_budget_cap(tmp_path):
    from dataclasses import replace

    capped = replace(CONFIG, dynamic_budget=1)
    wrong = (
        "```cpp\n#include <cstdio>\nint main(int argc, char **argv)\n{\n  int v;\n"
        "  scanf(\"%d\", &v);\n  printf(\"%d\\n\", v - 1);\n  return 0;\n}\n```\n"
    )
    entry = make_entry(tmp_path, "p", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")])
    # Query 1 (static) reaches a compilable unit; dynamic repairs then stop after one try.
    backend = ScriptedBackend([wrong, wrong, wrong], cycle=True)
    outcome = refine(entry, budget=10, backend=backend, config=capped)
    assert outcome.status is OutcomeStatus.COMPILED_BUT_FAILING
    assert outcome.queries_used == 2  # 1 static + 1 dynamic


def test_refine_all_parallel_matches_serial(tmp_path):
    entries = [
        make_entry(tmp_path, f"p{i}", BROKEN_NO_INCLUDE, [TestCase("1\n", "2\n")]) for i in range(3)
    ]

    class PerProgram:
        def complete(self, messages, program_id=""):
            return FIXED_INCLUDE

    serial = [o.to_record() for o in refine_all(entries, 3, PerProgram(), CONFIG, jobs=1)]
    parallel = [o.to_record() for o in refine_all(entries, 3, PerProgram(), CONFIG, jobs=3)]
    assert serial == parallel
