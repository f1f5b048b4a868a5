"""Experience memory for iterative agents.

A deterministic substrate that stores complete problem-solving episodes
(goal, procedure, iteration trace, evaluation) in a versioned graph,
retrieves them through semantic, structural, and graph channels, and
feeds them back into a five-phase plan/retrieve/iterate/evaluate/ingest
workflow so later attempts start from earlier evidence.
"""

from .embedding import DEFAULT_DIM, HashEmbedder, VectorIndex, cosine
from .errors import (
    AnswerLeakageError,
    BudgetTooSmallError,
    CycleError,
    DuplicateIdError,
    HookFailureError,
    InvariantError,
    MalformedDocumentError,
    MalformedPayloadError,
    MemoryEngineError,
    ThresholdError,
    UnknownNodeError,
)
from .experience import (
    DEFAULT_THETA,
    DEFAULT_WEIGHTS,
    Budgets,
    ErrorClass,
    ErrorEntry,
    EvidenceItem,
    EvidenceKind,
    ExperienceRecord,
    ExperienceStatus,
    GoalReflection,
    IterationIntent,
    IterationStep,
    PatchEntry,
    PatchKind,
    ProcedureReflection,
    ProcedureStep,
    assemble_experience,
    compress_for_prompt,
    compute_quality,
    gate,
    validate_experience,
)
from .graph import EdgeKind, GraphEdge, GraphNode, GraphStore, NodeKind
from .harness import (
    SimulatedWorld,
    SyntheticAdapter,
    SyntheticTask,
    build_task,
    make_transfer_universe,
    make_universe,
    read_tasks,
    write_tasks,
)
from .ingest import EvaluationInput, IngestConfig, IngestGate, decompose_feedback
from .maintenance import CompactionReport, compact
from .metrics import EpochMetrics, MetricsLedger, TaskResult, compute_metrics, plot_learning_curves
from .resolver import EntityResolver
from .retrieval import RetrievalBundle, RetrievalConfig, Retriever, ScoreBreakdown
from .signatures import (
    EMPTY_SIGNATURE,
    OperationCanon,
    RawStep,
    SignatureExtractor,
    StructuralSignature,
    lcs_length,
    structural_similarity,
)
from .store import MemoryStore, list_namespaces
from .workflow import (
    PRESETS,
    AgentContext,
    DomainAdapter,
    ExecutionOutcome,
    MemoryView,
    TaskSpec,
    WorkflowConfig,
    WorkflowEngine,
    WorkflowHooks,
    preset,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_DIM",
    "DEFAULT_THETA",
    "DEFAULT_WEIGHTS",
    "EMPTY_SIGNATURE",
    "PRESETS",
    "AgentContext",
    "AnswerLeakageError",
    "Budgets",
    "BudgetTooSmallError",
    "CompactionReport",
    "CycleError",
    "DomainAdapter",
    "DuplicateIdError",
    "EdgeKind",
    "EntityResolver",
    "EpochMetrics",
    "ErrorClass",
    "ErrorEntry",
    "EvaluationInput",
    "EvidenceItem",
    "EvidenceKind",
    "ExecutionOutcome",
    "ExperienceRecord",
    "ExperienceStatus",
    "GoalReflection",
    "GraphEdge",
    "GraphNode",
    "GraphStore",
    "HashEmbedder",
    "HookFailureError",
    "IngestConfig",
    "IngestGate",
    "InvariantError",
    "IterationIntent",
    "IterationStep",
    "MalformedDocumentError",
    "MalformedPayloadError",
    "MemoryEngineError",
    "MemoryStore",
    "MemoryView",
    "MetricsLedger",
    "NodeKind",
    "OperationCanon",
    "PatchEntry",
    "PatchKind",
    "ProcedureReflection",
    "ProcedureStep",
    "RawStep",
    "RetrievalBundle",
    "RetrievalConfig",
    "Retriever",
    "ScoreBreakdown",
    "SignatureExtractor",
    "SimulatedWorld",
    "StructuralSignature",
    "SyntheticAdapter",
    "SyntheticTask",
    "TaskResult",
    "TaskSpec",
    "ThresholdError",
    "UnknownNodeError",
    "VectorIndex",
    "WorkflowConfig",
    "WorkflowEngine",
    "WorkflowHooks",
    "assemble_experience",
    "build_task",
    "compact",
    "compress_for_prompt",
    "compute_metrics",
    "compute_quality",
    "cosine",
    "decompose_feedback",
    "gate",
    "lcs_length",
    "list_namespaces",
    "make_transfer_universe",
    "make_universe",
    "plot_learning_curves",
    "preset",
    "read_tasks",
    "structural_similarity",
    "validate_experience",
    "write_tasks",
]
