"""Deterministic cleanup rules for raw decompiler output, plus the rule-only baseline.

Everything here is regex/line-pattern based over text, never AST based: the
whole point is that decompiler output is frequently unparseable. All rules are
idempotent and tolerate arbitrarily broken input.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .errors import UnbalancedBraces


class Origin(Enum):
    DECOMPILER = "decompiler"
    PREPROCESSED = "preprocessed"
    LLM = "llm"
    BASELINE_FIXED = "baseline-fixed"


@dataclass(frozen=True)
class FunctionRecord:
    name: str
    signature_text: str
    body_span: tuple[int, int]  # offsets of '{' .. one past '}' in code
    body_is_empty_or_missing: bool
    decl_start: int = 0


@dataclass(frozen=True)
class SourceUnit:
    """One candidate source text with provenance.

    The function index is always derivable from `code` via index_functions;
    it is never stored because it would only be a cache.
    """

    program_id: str
    code: str
    origin: Origin
    iteration: int | None = None

    def functions(self) -> tuple[FunctionRecord, ...]:
        return index_functions(self.code)


@dataclass(frozen=True)
class RuleConfig:
    elf_symbols: tuple[str, ...] = (
        "_gmon_start__",
        "__cxa_finalize",
        "_ITM_deregisterTMCloneTable",
        "_ITM_registerTMCloneTable",
    )
    calling_conventions: tuple[str, ...] = ("__fastcall", "__cdecl", "__stdcall", "__usercall")
    canary_patterns: tuple[str, ...] = (
        r"__readfsqword\s*\(\s*0x28u?\s*\)",
        r"__readgsdword\s*\(\s*0x14u?\s*\)",
        r"\b__stack_chk_fail\b",
        r"\b__stack_chk_guard\b",
        r"\b__security_cookie\b",
        r"\b__security_check_cookie\b",
        r"\b__report_gsfailure\b",
    )


DEFAULT_RULE_CONFIG = RuleConfig()


def load_rule_config(path: str | Path) -> RuleConfig:
    """Load pattern overrides from a JSON file; absent keys keep the defaults."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"rules file {path} must contain a JSON object")
    kwargs = {}
    for key in ("elf_symbols", "calling_conventions", "canary_patterns"):
        if key in doc:
            values = doc[key]
            if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
                raise ValueError(f"rules file {path}: {key} must be an array of strings")
            kwargs[key] = tuple(values)
    return replace(DEFAULT_RULE_CONFIG, **kwargs)


def excluded_spans_mask(code: str) -> bytearray:
    """Mark positions inside string/char literals and comments.

    Tolerates unterminated literals (stops at end of line) and unterminated
    block comments (masked to end of text).
    """
    n = len(code)
    mask = bytearray(n)
    i = 0
    while i < n:
        c = code[i]
        nxt = code[i + 1] if i + 1 < n else ""
        if c == "/" and nxt == "/":
            j = code.find("\n", i)
            j = n if j < 0 else j
            mask[i:j] = b"\x01" * (j - i)
            i = j
        elif c == "/" and nxt == "*":
            end = code.find("*/", i + 2)
            j = n if end < 0 else end + 2
            mask[i:j] = b"\x01" * (j - i)
            i = j
        elif c in ('"', "'"):
            quote = c
            j = i + 1
            while j < n:
                if code[j] == "\\":
                    j += 2
                    continue
                if code[j] == quote:
                    j += 1
                    break
                if code[j] == "\n":
                    break
                j += 1
            j = min(j, n)
            mask[i:j] = b"\x01" * (j - i)
            i = j
        else:
            i += 1
    return mask


_IDENT_RE = re.compile(r"[A-Za-z_]\w*")

_NOT_FUNCTION_NAMES = frozenset(
    {"if", "for", "while", "switch", "return", "sizeof", "do", "else", "catch"}
)


def _body_is_blank(body: str) -> bool:
    """True when a brace-delimited body holds only whitespace and comments."""
    i, n = 0, len(body)
    while i < n:
        c = body[i]
        nxt = body[i + 1] if i + 1 < n else ""
        if c == "/" and nxt == "/":
            j = body.find("\n", i)
            i = n if j < 0 else j
        elif c == "/" and nxt == "*":
            j = body.find("*/", i + 2)
            i = n if j < 0 else j + 2
        elif c.isspace():
            i += 1
        else:
            return False
    return True


def _header_before_brace(code: str, mask: bytearray, brace_pos: int) -> tuple[str, int] | None:
    """Identify a function header ending just before a top-level '{'.

    Returns (name, decl_start) or None when the brace belongs to something
    that is not a function definition (struct, namespace, initializer, ...).
    """
    j = brace_pos - 1
    while j >= 0 and (mask[j] or code[j].isspace()):
        j -= 1
    if j < 0 or code[j] != ")":
        return None
    # Walk back to the matching '('.
    depth = 0
    while j >= 0:
        if not mask[j]:
            if code[j] == ")":
                depth += 1
            elif code[j] == "(":
                depth -= 1
                if depth == 0:
                    break
        j -= 1
    if j < 0:
        return None
    j -= 1
    while j >= 0 and (mask[j] or code[j].isspace()):
        j -= 1
    name_end = j
    while j >= 0 and not mask[j] and (code[j].isalnum() or code[j] == "_"):
        j -= 1
    name = code[j + 1 : name_end + 1]
    if not _IDENT_RE.fullmatch(name) or name in _NOT_FUNCTION_NAMES:
        return None
    # Extend backwards over return-type tokens (identifiers, *, &, ::, ~)
    # separated by whitespace; stop at any other character or a masked span.
    decl_start = j + 1
    k = j
    while k >= 0 and not mask[k]:
        c = code[k]
        if c.isalnum() or c in "_*&:~":
            decl_start = k
            k -= 1
        elif c in " \t\n\r":
            k -= 1
        else:
            break
    return name, decl_start


def index_functions(code: str) -> tuple[FunctionRecord, ...]:
    """Locate top-level function definitions with a literal-aware brace scan.

    Prototype-only declarations yield no record. Raises UnbalancedBraces when
    the scan cannot pair every brace; callers treat such a unit as
    structurally suspect.
    """
    mask = excluded_spans_mask(code)
    records: list[FunctionRecord] = []
    depth = 0
    open_info: tuple[tuple[str, int] | None, int] | None = None
    for i, c in enumerate(code):
        if mask[i]:
            continue
        if c == "{":
            if depth == 0:
                open_info = (_header_before_brace(code, mask, i), i)
            depth += 1
        elif c == "}":
            depth -= 1
            if depth < 0:
                raise UnbalancedBraces("unmatched '}' at top level")
            if depth == 0 and open_info is not None:
                header, open_pos = open_info
                if header is not None:
                    name, decl_start = header
                    records.append(
                        FunctionRecord(
                            name=name,
                            signature_text=code[decl_start:open_pos].strip(),
                            body_span=(open_pos, i + 1),
                            body_is_empty_or_missing=_body_is_blank(code[open_pos + 1 : i]),
                            decl_start=decl_start,
                        )
                    )
                open_info = None
    if depth != 0:
        raise UnbalancedBraces(f"{depth} unclosed brace(s)")
    return tuple(records)


def _drop_matching_lines(code: str, patterns: list[re.Pattern[str]]) -> str:
    """Remove every line on which any pattern matches outside literals/comments."""
    if not patterns:
        return code
    mask = excluded_spans_mask(code)
    out: list[str] = []
    pos = 0
    n = len(code)
    while pos < n:
        nl = code.find("\n", pos)
        end = n if nl < 0 else nl + 1
        line = code[pos:end]
        dropped = False
        for pat in patterns:
            for m in pat.finditer(line):
                if not mask[pos + m.start()]:
                    dropped = True
                    break
            if dropped:
                break
        if not dropped:
            out.append(line)
        pos = end
    return "".join(out)


def strip_elf_runtime_symbols(unit: SourceUnit, rules: RuleConfig = DEFAULT_RULE_CONFIG) -> SourceUnit:
    """Drop declarations of and calls to binary-runtime symbols (rule 1)."""
    patterns = [re.compile(rf"(?<!\w){re.escape(sym)}(?!\w)") for sym in rules.elf_symbols]
    return replace(unit, code=_drop_matching_lines(unit.code, patterns))


def strip_security_checks(unit: SourceUnit, rules: RuleConfig = DEFAULT_RULE_CONFIG) -> SourceUnit:
    """Drop compiler-inserted stack-guard reads, compares and abort branches (rule 2)."""
    patterns = [re.compile(p) for p in rules.canary_patterns]
    return replace(unit, code=_drop_matching_lines(unit.code, patterns))


_MAIN_PARAMS_OK = re.compile(r"^int\s+argc\s*,\s*char\s*\*\s*\*\s*argv$")
_MAIN_SIG_SPLIT = re.compile(r"^(?P<ret>.*?)\bmain\s*\((?P<params>.*)\)\s*$", re.S)
_MAIN_LINE_RE = re.compile(r"^(?P<indent>[ \t]*)(?P<ret>[A-Za-z_][\w\s\*&:]*?)\bmain\s*\((?P<params>[^)\n]*)\)", re.M)


def _main_is_conforming(ret: str, params: str) -> bool:
    if " ".join(ret.split()) != "int":
        return False
    p = " ".join(params.split())
    return p in ("", "void") or bool(_MAIN_PARAMS_OK.match(p))


def _param_names(params: str) -> list[str]:
    names = []
    for part in params.split(","):
        idents = _IDENT_RE.findall(part)
        names.append(idents[-1] if idents else "")
    return names


def _rename_in_span(code: str, start: int, end: int, mapping: dict[str, str]) -> str:
    """Word-boundary renames inside code[start:end], skipping literals/comments.

    Single pass so spans stay valid; a rename whose target already occurs in
    the region is skipped to avoid capturing an existing identifier.
    """
    mask = excluded_spans_mask(code)
    region = code[start:end]
    safe = {
        old: new
        for old, new in mapping.items()
        if old and old != new and not re.search(rf"(?<!\w){re.escape(new)}(?!\w)", region)
    }
    if not safe:
        return code
    pat = re.compile(r"(?<!\w)(?:" + "|".join(re.escape(o) for o in safe) + r")(?!\w)")
    pieces: list[str] = []
    last = 0
    for m in pat.finditer(region):
        if mask[start + m.start()]:
            continue
        pieces.append(region[last : m.start()])
        pieces.append(safe[m.group(0)])
        last = m.end()
    pieces.append(region[last:])
    return code[:start] + "".join(pieces) + code[end:]


def _rewrite_main(code: str) -> str:
    """Normalize a deviating entry-point prototype to int main(int argc, char **argv)."""
    try:
        records = index_functions(code)
    except UnbalancedBraces:
        # Structurally broken unit: best-effort single-line rewrite, no rename.
        def _sub(m: re.Match[str]) -> str:
            if _main_is_conforming(m.group("ret"), m.group("params")):
                return m.group(0)
            return m.group("indent") + "int main(int argc, char **argv)"

        return _MAIN_LINE_RE.sub(_sub, code, count=1)

    for rec in records:
        if rec.name != "main":
            continue
        m = _MAIN_SIG_SPLIT.match(rec.signature_text)
        if not m or _main_is_conforming(m.group("ret"), m.group("params")):
            return code
        old_names = _param_names(m.group("params"))
        body_start, body_end = rec.body_span
        mapping = dict(zip(old_names, ("argc", "argv")))
        code = _rename_in_span(code, body_start, body_end, mapping)
        # Splice the canonical signature over [decl_start, rparen]; renames
        # above only touched the body, which lies after the signature.
        rparen = code.rfind(")", rec.decl_start, body_start)
        return code[: rec.decl_start] + "int main(int argc, char **argv)" + code[rparen + 1 :]
    return code


def fix_declarations(unit: SourceUnit, rules: RuleConfig = DEFAULT_RULE_CONFIG) -> SourceUnit:
    """Strip calling-convention annotations and standardize main's prototype (rule 3)."""
    code = unit.code
    if rules.calling_conventions:
        mask = excluded_spans_mask(code)
        pat = re.compile(
            r"[ \t]*(?<!\w)(?:" + "|".join(re.escape(c) for c in rules.calling_conventions) + r")(?!\w)"
        )
        pieces: list[str] = []
        last = 0
        for m in pat.finditer(code):
            anchor = m.end() - 1
            if mask[anchor]:
                continue
            pieces.append(code[last : m.start()])
            last = m.end()
        pieces.append(code[last:])
        code = "".join(pieces)
    code = _rewrite_main(code)
    return replace(unit, code=code)


def preprocess_unit(unit: SourceUnit, rules: RuleConfig = DEFAULT_RULE_CONFIG) -> SourceUnit:
    """Apply cleanup rules 1-3; this is what the repair pipeline runs before prompting."""
    out = strip_elf_runtime_symbols(unit, rules)
    out = strip_security_checks(out, rules)
    out = fix_declarations(out, rules)
    return replace(out, origin=Origin.PREPROCESSED)


def apply_baseline_rules(
    unit: SourceUnit, header_hint: str | None = None, rules: RuleConfig = DEFAULT_RULE_CONFIG
) -> SourceUnit:
    """The complete rule-only baseline fixer: rules 1-3 plus a header/namespace hint.

    No model involvement anywhere. The hint (include directives and
    using-declarations recovered from original source) is prepended verbatim.
    """
    out = strip_elf_runtime_symbols(unit, rules)
    out = strip_security_checks(out, rules)
    out = fix_declarations(out, rules)
    code = out.code
    if header_hint:
        sep = "" if header_hint.endswith("\n") else "\n"
        code = header_hint + sep + code
    return replace(out, code=code, origin=Origin.BASELINE_FIXED)
