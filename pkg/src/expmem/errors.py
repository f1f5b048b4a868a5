"""Exception types shared across the experience-memory engine."""


class MemoryEngineError(Exception):
    """Base class for every error raised by this package."""


# --- graph store ---

class DuplicateIdError(MemoryEngineError):
    """A node or edge id was supplied that already exists in the namespace."""


class UnknownNodeError(MemoryEngineError, KeyError):
    """Lookup of a node id that is not in the store."""


class MissingEndpointError(MemoryEngineError):
    """An edge names a source or target node that does not exist."""


class MalformedPayloadError(MemoryEngineError):
    """Node fails basic shape checks (empty title/description, bad version)."""


class TypeConstraintError(MemoryEngineError):
    """Edge endpoints violate the kind constraints for that edge kind."""


class ThresholdError(MemoryEngineError):
    """Similarity edge weight is missing or below the kind's threshold."""


class NotAnEntityError(MemoryEngineError):
    """version_entity was called on a node that is not an Entity."""


class AlreadySupersededError(MemoryEngineError):
    """Attempt to supersede a node that already has a successor."""


class CycleError(MemoryEngineError):
    """A supersedes chain loops back on itself (corrupted store)."""


class SchemaVersionError(MemoryEngineError):
    """A namespace log carries an unsupported schema header."""


# --- embeddings / index ---

class EmptyTextError(MemoryEngineError):
    """embed() was called with empty or whitespace-only text."""


class DimMismatchError(MemoryEngineError):
    """Vector dimensionality differs from the index/embedder dimension."""


class ZeroVectorError(MemoryEngineError):
    """Cosine similarity is undefined for a zero-magnitude vector."""


# --- experience records ---

class InvariantError(MemoryEngineError):
    """An experience record violates a validation clause.

    The message names the violated clause(s).
    """


class BudgetTooSmallError(MemoryEngineError):
    """compress_for_prompt was given a budget below the supported minimum."""


class MalformedDocumentError(MemoryEngineError):
    """A serialized experience document could not be parsed."""


# --- ingest / metrics ---

class WeightSumError(MemoryEngineError):
    """Quality weights are negative or do not sum to 1."""


class RaggedInputError(MemoryEngineError):
    """Per-epoch outcome rows do not form a rectangular task matrix."""


# --- workflow ---

class HookFailureError(MemoryEngineError):
    """A workflow hook raised; carries the phase name."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"hook failed during {phase}: {cause!r}")
        self.phase = phase
        self.cause = cause


class AnswerLeakageError(MemoryEngineError):
    """The hidden oracle payload surfaced in an agent-visible context."""
