"""Exception hierarchy shared across the package."""


class RagPoisonError(Exception):
    """Base class for all package errors."""


class CorpusParseError(RagPoisonError):
    """A corpus or snapshot file line could not be parsed."""

    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


class IdConflictError(RagPoisonError):
    """A record id collides with one already present."""

    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"duplicate record id: {record_id!r}")


class EmbeddingLookupError(RagPoisonError):
    """A precomputed-embedding lookup missed."""

    def __init__(self, key: str):
        self.key = key
        super().__init__(f"no precomputed embedding for id {key!r}")


class DomainError(RagPoisonError):
    """An argument is outside an operation's declared domain."""


class CapabilityError(RagPoisonError):
    """An encoder lacks a capability the operation requires."""


class ConfigError(RagPoisonError):
    """A configuration value violates its contract."""


class GenerationError(RagPoisonError):
    """An LLM endpoint failed after retries."""

    def __init__(self, message: str, status: int | None = None):
        self.status = status
        super().__init__(message)


class ProtocolError(RagPoisonError):
    """An LLM endpoint replied with a body we cannot interpret."""


class ExperimentError(RagPoisonError):
    """A pipeline stage failed; carries the stage and case for triage."""

    def __init__(self, stage: str, case_id: str, cause: Exception):
        self.stage = stage
        self.case_id = case_id
        self.cause = cause
        super().__init__(f"stage {stage!r} failed for case {case_id!r}: {cause}")
