"""Pipeline configuration: defaults, config-file loading, precedence handling.

Precedence: built-in defaults < config file < command-line flags. The API key
comes only from the environment, never from flags, so it stays out of shell
history.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .compilebox import CompilerConfig
from .errors import ConfigError
from .llm import DEFAULT_CONTEXT_LIMIT, DEFAULT_SYSTEM_PROMPT
from .preprocess import DEFAULT_RULE_CONFIG, RuleConfig, load_rule_config
from .runbox import ResourceLimits

API_KEY_ENV = "REDEC_API_KEY"


@dataclass(frozen=True)
class LlmConfig:
    url: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-3.5-turbo"
    temperature: float | None = None  # provider default unless set; no tuning by design
    context_limit: int = DEFAULT_CONTEXT_LIMIT
    max_retries: int = 3
    backoff_s: float = 1.0
    min_interval_s: float = 0.0
    timeout_s: float = 120.0


@dataclass(frozen=True)
class PipelineConfig:
    compiler: CompilerConfig = CompilerConfig()
    rules: RuleConfig = DEFAULT_RULE_CONFIG
    limits: ResourceLimits = ResourceLimits()
    llm: LlmConfig = LlmConfig()
    system_prompt: str = DEFAULT_SYSTEM_PROMPT
    context_lines: int = 2
    max_error_chars: int = 4000
    always_refine: bool = False
    # Optional per-phase caps inside the unified budget, for experimentation.
    static_budget: int | None = None
    dynamic_budget: int | None = None


def _load_doc(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib as toml
        else:
            import tomli as toml
        try:
            return toml.loads(text)
        except toml.TOMLDecodeError as exc:
            raise ConfigError(f"bad TOML in {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must contain an object")
    return doc


def _take(doc: dict, section: str, allowed: set[str]) -> dict:
    sub = doc.get(section, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"config section {section!r} must be a table/object")
    unknown = set(sub) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    return sub


def load_config(path: str | Path | None) -> PipelineConfig:
    """Build a PipelineConfig from an optional TOML/JSON file over the defaults.

    Recognized sections: compiler {path, base_flags, sanitize_flags,
    timeout_ms}, llm {url, model, temperature, context_limit, max_retries,
    backoff_s, min_interval_s, timeout_s}, limits {stdout_cap_bytes,
    memory_bytes, asan_options}, pipeline {system_prompt, context_lines,
    max_error_chars, always_refine}, rules {path}.
    """
    cfg = PipelineConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    doc = _load_doc(path)

    comp = _take(doc, "compiler", {"path", "base_flags", "sanitize_flags", "timeout_ms"})
    if comp:
        kwargs = dict(comp)
        for key in ("base_flags", "sanitize_flags"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        cfg = replace(cfg, compiler=replace(cfg.compiler, **kwargs))

    llm = _take(
        doc,
        "llm",
        {"url", "model", "temperature", "context_limit", "max_retries", "backoff_s", "min_interval_s", "timeout_s"},
    )
    if llm:
        cfg = replace(cfg, llm=replace(cfg.llm, **llm))

    limits = _take(doc, "limits", {"stdout_cap_bytes", "memory_bytes", "asan_options"})
    if limits:
        cfg = replace(cfg, limits=replace(cfg.limits, **limits))

    pipe = _take(
        doc,
        "pipeline",
        {"system_prompt", "context_lines", "max_error_chars", "always_refine", "static_budget", "dynamic_budget"},
    )
    if pipe:
        cfg = replace(cfg, **pipe)

    rules = _take(doc, "rules", {"path"})
    if rules.get("path"):
        rules_path = Path(rules["path"])
        if not rules_path.is_absolute():
            rules_path = path.parent / rules_path
        cfg = replace(cfg, rules=load_rule_config(rules_path))
    return cfg
