"""Exception hierarchy shared across the engine."""


class EngineError(Exception):
    """Base class for every domain error raised by this package."""


# --- corpus / embedding store ---

class FormatError(EngineError):
    """Corpus file is structurally malformed (bad magic, truncated block, ...)."""


class DimensionError(EngineError):
    """Embedding dimensions disagree between manifest, blocks, or vectors."""


class DataError(EngineError):
    """A stored value violates a data invariant (non-finite, duplicate coordinate)."""


class NotFoundError(EngineError):
    """Requested slide, level, toolkit, or session does not exist."""


# --- highlighter ---

class EmptySupportError(EngineError):
    """Prototype construction received an empty support set."""


class ZeroNormError(EngineError):
    """Cosine similarity is undefined for a zero-norm vector."""


class ConfigError(EngineError):
    """Invalid configuration value or misused toolkit mode."""


class EmptyHighlightError(EngineError):
    """Region selection found no highlighted patches to sample from."""


class InsufficientSupportError(EngineError):
    """Fewer support vectors than requested cluster count."""


class NoTumorError(EngineError):
    """Area map found no patches assigned to any tumor pattern."""


# --- parsing / prompts ---

class TemplateError(EngineError):
    """A prompt template is missing a required context field."""


# --- reward ---

class ContractError(EngineError):
    """Caller violated an operation precondition."""


# --- sessions / backends ---

class SessionError(EngineError):
    """A diagnostic session could not proceed."""


class BackendUnavailable(EngineError):
    """Transport to a model backend failed after exhausting the retry budget."""


class BackendRejected(EngineError):
    """Backend answered with a non-2xx status; body is preserved."""

    def __init__(self, status: int, body: str):
        super().__init__(f"backend rejected request with status {status}: {body[:200]}")
        self.status = status
        self.body = body


# --- evaluation ---

class EmptyEvalError(EngineError):
    """Metric requested over an empty prediction set."""
