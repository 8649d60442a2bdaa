"""Exception types shared across the pipeline."""


class RedecError(Exception):
    """Base class for all redec errors."""


class ManifestParseError(RedecError):
    """Manifest file is missing, malformed, or violates the schema."""


class MissingArtifact(RedecError):
    """A file referenced by the manifest does not exist."""


class InvalidRange(RedecError):
    """Bad bucketing parameters (lo >= hi or k < 1)."""


class UnbalancedBraces(RedecError):
    """The brace scan could not pair all braces; the unit is structurally suspect."""


class CompilerNotFound(RedecError):
    """The configured compiler executable is not on PATH."""


class CompileTimeout(RedecError):
    """Compilation exceeded its wall-time limit. Distinct from diagnostics."""


class WorkdirError(RedecError):
    """The compile working directory could not be created or written."""


class ExecError(RedecError):
    """A compiled binary could not be spawned."""


class NotASanitizerReport(RedecError):
    """Text passed to the sanitizer parser has no sanitizer error banner."""


class MissingSlot(RedecError):
    """A prompt template placeholder was not supplied."""

    def __init__(self, slot: str):
        super().__init__(f"missing prompt slot: {slot}")
        self.slot = slot


class BackendUnavailable(RedecError):
    """Completion backend failed after exhausting retries."""


class FixtureExhausted(RedecError):
    """Replay backend has no recorded response for the requested ordinal."""


class ContextOverflow(RedecError):
    """Backend reported the conversation no longer fits its context window."""


class EmptyExtraction(RedecError):
    """No code-like content could be extracted from a model response."""


class MismatchedRecords(RedecError):
    """Outcome records and manifest entries do not pair one-to-one."""


class ConfigError(RedecError):
    """Invalid configuration file or flag combination."""
