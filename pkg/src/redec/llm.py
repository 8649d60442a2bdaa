"""Chat transcripts, repair prompt templates, token admission, completion backends.

Two backends ship: an OpenAI-compatible HTTP chat endpoint and a replay
backend serving pre-recorded responses from a fixtures directory. Replay makes
the entire pipeline deterministic and testable offline; a recording wrapper
captures live responses into the replay layout.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import requests

from .corpus import TokenEstimator, estimate_tokens
from .errors import (
    BackendUnavailable,
    ContextOverflow,
    EmptyExtraction,
    FixtureExhausted,
    MissingSlot,
)
from .preprocess import SourceUnit

DEFAULT_SYSTEM_PROMPT = (
    "Generate linux compilable C++ code of the main and other functions in the "
    "supplied snippet without using goto, fix any missing headers and reducing "
    "the number of intermediate variable. Only reply the fixed source code. Do "
    "not explain anything and include any extra instructions, only print the "
    "fixed source code."
)

DEFAULT_CONTEXT_LIMIT = 4096


class Role(Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self):
        if not self.content:
            raise ValueError("message content must be nonempty")


class Transcript:
    """Append-only conversation history; the system message is set exactly once."""

    def __init__(self) -> None:
        self._messages: list[ChatMessage] = []

    @property
    def messages(self) -> tuple[ChatMessage, ...]:
        return tuple(self._messages)

    @property
    def total_queries(self) -> int:
        return sum(1 for m in self._messages if m.role is Role.ASSISTANT)

    def set_system(self, content: str) -> None:
        if self._messages:
            raise ValueError("system message must be the first and only set once")
        self._messages.append(ChatMessage(Role.SYSTEM, content))

    def append_user(self, content: str) -> ChatMessage:
        self._require_system()
        msg = ChatMessage(Role.USER, content)
        self._messages.append(msg)
        return msg

    def append_assistant(self, content: str) -> ChatMessage:
        self._require_system()
        msg = ChatMessage(Role.ASSISTANT, content)
        self._messages.append(msg)
        return msg

    def _require_system(self) -> None:
        if not self._messages:
            raise ValueError("the first transcript message must be the system prompt")

    def restart(self, keep_system: bool = True) -> None:
        """Drop history (context-limit recovery); the system message survives."""
        system = self._messages[0] if self._messages and self._messages[0].role is Role.SYSTEM else None
        self._messages = [system] if keep_system and system else []


class PromptKind(Enum):
    INITIAL = "initial"
    COMPILE_ERROR = "compile-error"
    OUTPUT_ERROR = "output-error"
    SANITIZER_ERROR = "sanitizer-error"


_TEMPLATES: dict[PromptKind, tuple[str, tuple[str, ...]]] = {
    PromptKind.INITIAL: ("{pseudocode}", ("pseudocode",)),
    PromptKind.COMPILE_ERROR: (
        "Please fix the following compilation errors in the source code: {compiler_error} {pseudocode}",
        ("compiler_error", "pseudocode"),
    ),
    PromptKind.OUTPUT_ERROR: (
        "The expected output of the program for input: {expected_input} is {expected_output}, "
        "but we got {wrong_output}. Please fix the issue in the source code: {pseudocode}",
        ("expected_input", "expected_output", "wrong_output", "pseudocode"),
    ),
    PromptKind.SANITIZER_ERROR: (
        "Please fix the {type_of_memory_corruption} triggered in {statement}: {pseudocode}",
        ("type_of_memory_corruption", "statement", "pseudocode"),
    ),
}


def fence_code(code: str) -> str:
    body = code if code.endswith("\n") else code + "\n"
    return "```cpp\n" + body + "```"


def render_prompt(kind: PromptKind, slots: Mapping[str, str]) -> ChatMessage:
    """Fill the template for `kind`; the pseudocode slot is fenced as Markdown code.

    The pseudocode text itself is never altered — the rendered prompt always
    contains it as a verbatim substring.
    """
    template, required = _TEMPLATES[kind]
    values = {}
    for name in required:
        if name not in slots:
            raise MissingSlot(name)
        values[name] = fence_code(slots[name]) if name == "pseudocode" else slots[name]
    return ChatMessage(Role.USER, template.format(**values))


def system_message(text: str = DEFAULT_SYSTEM_PROMPT) -> ChatMessage:
    return ChatMessage(Role.SYSTEM, text)


def admit(
    unit: SourceUnit,
    system_prompt: str,
    context_limit: int = DEFAULT_CONTEXT_LIMIT,
    estimator: TokenEstimator = estimate_tokens,
) -> bool:
    """Token-budget gate: code + system prompt must use strictly less than half
    the context window, leaving room for the model to emit a full rewrite."""
    if context_limit <= 0:
        raise ValueError("context_limit must be positive")
    return estimator(unit.code) + estimator(system_prompt) < context_limit / 2


class CompletionBackend(Protocol):
    def complete(self, messages: Sequence[ChatMessage], program_id: str = "") -> str: ...


def complete(transcript: Transcript, backend: CompletionBackend, program_id: str = "") -> ChatMessage:
    """Query the backend with the full history; the caller appends the reply."""
    messages = transcript.messages
    if not messages or messages[-1].role is not Role.USER:
        raise ValueError("transcript must end with a user message")
    content = backend.complete(messages, program_id=program_id)
    return ChatMessage(Role.ASSISTANT, content)


class ReplayBackend:
    """Serve recorded responses from <fixtures>/<program_id>/<ordinal>.txt (1-based)."""

    def __init__(self, fixtures_dir: str | Path):
        self.fixtures_dir = Path(fixtures_dir)
        self._ordinals: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete(self, messages: Sequence[ChatMessage], program_id: str = "") -> str:
        with self._lock:
            ordinal = self._ordinals.get(program_id, 0) + 1
            self._ordinals[program_id] = ordinal
        path = self.fixtures_dir / program_id / f"{ordinal}.txt"
        if not path.is_file():
            raise FixtureExhausted(f"no fixture for program {program_id!r} ordinal {ordinal} ({path})")
        return path.read_text(encoding="utf-8")


class RecordingBackend:
    """Wrap another backend and capture its responses into the replay layout."""

    def __init__(self, inner: CompletionBackend, fixtures_dir: str | Path):
        self.inner = inner
        self.fixtures_dir = Path(fixtures_dir)
        self._ordinals: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete(self, messages: Sequence[ChatMessage], program_id: str = "") -> str:
        response = self.inner.complete(messages, program_id=program_id)
        with self._lock:
            ordinal = self._ordinals.get(program_id, 0) + 1
            self._ordinals[program_id] = ordinal
        dest = self.fixtures_dir / program_id
        dest.mkdir(parents=True, exist_ok=True)
        (dest / f"{ordinal}.txt").write_text(response, encoding="utf-8")
        return response


_RETRYABLE_STATUS = {429, 500, 502, 503, 504}
_CONTEXT_ERROR_MARKERS = ("context_length_exceeded", "maximum context length", "context window")


class HttpBackend:
    """OpenAI-compatible chat-completions client with retry, backoff and a rate cap."""

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str | None = None,
        temperature: float | None = None,
        timeout_s: float = 120.0,
        max_retries: int = 3,
        backoff_s: float = 1.0,
        min_interval_s: float = 0.0,
    ):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.temperature = temperature
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.min_interval_s = min_interval_s
        self._lock = threading.Lock()
        self._last_request = 0.0

    def _respect_rate_cap(self) -> None:
        if self.min_interval_s <= 0:
            return
        with self._lock:
            wait = self._last_request + self.min_interval_s - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()

    def complete(self, messages: Sequence[ChatMessage], program_id: str = "") -> str:
        payload: dict = {
            "model": self.model,
            "messages": [{"role": m.role.value, "content": m.content} for m in messages],
        }
        if self.temperature is not None:
            payload["temperature"] = self.temperature
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error = "no attempt made"
        for attempt in range(self.max_retries + 1):
            self._respect_rate_cap()
            try:
                resp = requests.post(self.url, json=payload, headers=headers, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    try:
                        content = resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise BackendUnavailable(f"malformed completion response: {exc}") from exc
                    if not isinstance(content, str) or not content:
                        raise BackendUnavailable("completion response had empty content")
                    return content
                body = resp.text[:2000]
                if any(marker in body for marker in _CONTEXT_ERROR_MARKERS):
                    raise ContextOverflow(f"backend reported context overflow: HTTP {resp.status_code}")
                if resp.status_code not in _RETRYABLE_STATUS:
                    raise BackendUnavailable(f"HTTP {resp.status_code}: {body}")
                last_error = f"HTTP {resp.status_code}"
            if attempt < self.max_retries:
                time.sleep(self.backoff_s * (2**attempt))
        raise BackendUnavailable(f"retries exhausted: {last_error}")


_FENCE_RE = re.compile(r"```[ \t]*[A-Za-z0-9_+.-]*[ \t]*\r?\n(.*?)(?:\r?\n)?```", re.S)

_CODE_LINE_KEYWORDS = re.compile(
    r"^\s*(?:template\b|typedef\b|using\b|namespace\b|struct\b|class\b|enum\b|union\b"
    r"|extern\b|static\b|const\b|constexpr\b|inline\b|unsigned\b|signed\b|void\b|int\b"
    r"|long\b|short\b|char\b|float\b|double\b|bool\b|auto\b|return\b|if\b|for\b|while\b"
    r"|do\b|switch\b|case\b|break\b|continue\b|std::)"
)


def _code_like(line: str) -> bool:
    s = line.strip()
    if not s:
        return False
    if s.startswith("#"):
        return True
    if s[-1] in ";{}" or s in ("{", "}"):
        return True
    if s.startswith("//") or s.startswith("/*") or s.startswith("*/"):
        return True
    return bool(_CODE_LINE_KEYWORDS.match(s))


def extract_code(response: str) -> str:
    """Recover candidate source from a model response.

    Fenced code blocks win: all blocks are concatenated in order with fences
    and language tags stripped. Without fences, leading/trailing prose lines
    are dropped heuristically. Never returns fence markers; idempotent.
    """
    blocks = _FENCE_RE.findall(response)
    if blocks:
        text = "\n".join(blocks).strip("\n")
        if text.strip():
            return text
        raise EmptyExtraction("fenced blocks were empty")
    lines = [l for l in response.split("\n") if not l.strip().startswith("```")]
    code_idx = [i for i, l in enumerate(lines) if _code_like(l)]
    if not code_idx:
        raise EmptyExtraction("no code-like content in response")
    return "\n".join(lines[code_idx[0] : code_idx[-1] + 1])
