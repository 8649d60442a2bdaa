"""redec: make raw C/C++ decompiler output recompilable and test-verified.

Pipeline stages: deterministic cleanup rules, a compiler-feedback repair loop
driven by a pluggable chat-completion backend, and a sanitizer-driven runtime
repair loop — plus a rule-only baseline mode and an evaluation report.
"""

from .corpus import (
    CompareMode,
    ProgramEntry,
    TestCase,
    bucket_by_context,
    estimate_tokens,
    load_manifest,
    save_manifest,
)
from .pipeline import OutcomeStatus, RefinementOutcome, refine, refine_all
from .preprocess import (
    Origin,
    SourceUnit,
    apply_baseline_rules,
    index_functions,
    preprocess_unit,
)

__version__ = "0.1.0"

__all__ = [
    "CompareMode",
    "OutcomeStatus",
    "Origin",
    "ProgramEntry",
    "RefinementOutcome",
    "SourceUnit",
    "TestCase",
    "apply_baseline_rules",
    "bucket_by_context",
    "estimate_tokens",
    "index_functions",
    "load_manifest",
    "preprocess_unit",
    "refine",
    "refine_all",
    "save_manifest",
    "__version__",
]
