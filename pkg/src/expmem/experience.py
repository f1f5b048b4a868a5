"""Experience records: the six-layer reflection schema and its contracts.

An experience captures one completed task attempt as goal, procedure,
evidence, iteration trace, error registry, and patch layers, plus an
evaluation and a success/failure status.  Records are immutable once
committed; the canonical serialization is a single JSON document with a
fixed field order and embedding vectors quantized to 9 significant digits.

The quality score is the weighted sum q = w_c*c + w_e*eta + w_k*kappa with
defaults (0.9, 0.05, 0.05); the gate marks a record successful iff q >= 0.3
unless a domain oracle explicitly rejected the artifact, which forces
failure regardless of teacher scores (the override is recorded).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    BudgetTooSmallError,
    InvariantError,
    MalformedDocumentError,
    WeightSumError,
)
from .signatures import StructuralSignature

DEFAULT_WEIGHTS = (0.9, 0.05, 0.05)
DEFAULT_THETA = 0.3
QUALITY_TOLERANCE = 1e-12
MIN_PROMPT_BUDGET = 200


class ExperienceStatus(str, Enum):
    SUCCESSFUL = "successful"
    FAILED = "failed"


class IterationIntent(str, Enum):
    """Why an iteration ran; intents only ever escalate within a trace."""

    EXPLORATION = "exploration"
    REFINEMENT = "refinement"
    ERROR_CORRECTION = "error_correction"

    @property
    def rank(self) -> int:
        return _INTENT_RANK[self]


_INTENT_RANK = {
    IterationIntent.EXPLORATION: 0,
    IterationIntent.REFINEMENT: 1,
    IterationIntent.ERROR_CORRECTION: 2,
}


class EvidenceKind(str, Enum):
    WEB = "web"
    TOOL_OUTPUT = "tool_output"
    DB_RESULT = "db_result"
    FILE_SNAPSHOT = "file_snapshot"


class ErrorClass(str, Enum):
    CONSTRAINT_VIOLATION = "constraint_violation"
    ENTITY_DISAMBIGUATION = "entity_disambiguation"
    TOOL_FAILURE = "tool_failure"
    SCHEMA_MISMATCH = "schema_mismatch"


class RecoveryProcedure(str, Enum):
    RETRY_WITH_PATCH = "retry_with_patch"
    FALLBACK_SOURCE = "fallback_source"
    ESCALATE = "escalate"


class RecoveryOutcome(str, Enum):
    RECOVERED = "recovered"
    FAILED_RECOVERY = "failed_recovery"
    ESCALATED = "escalated"


class PatchKind(str, Enum):
    INSERT_STEP = "insert_step"
    REPLACE_LOGIC = "replace_logic"


# --------------------------------------------------------------------------
# layer records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GoalReflection:
    """What the task asked for, in retrievable form."""

    task_description: str
    task_embedding: tuple[float, ...]
    domain: str
    constraints: tuple[str, ...] = ()
    verification_contract: tuple[str, ...] = ()
    signature: StructuralSignature = StructuralSignature(ops=())
    entity_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "task_description": self.task_description,
            "task_embedding": list(self.task_embedding),
            "domain": self.domain,
            "constraints": list(self.constraints),
            "verification_contract": list(self.verification_contract),
            "goal_signature": self.signature.to_dict(),
            "entity_ids": list(self.entity_ids),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GoalReflection":
        return cls(
            task_description=obj["task_description"],
            task_embedding=tuple(obj.get("task_embedding", ())),
            domain=obj.get("domain", ""),
            constraints=tuple(obj.get("constraints", ())),
            verification_contract=tuple(obj.get("verification_contract", ())),
            signature=StructuralSignature.from_dict(obj.get("goal_signature", {})),
            entity_ids=tuple(obj.get("entity_ids", ())),
        )


@dataclass(frozen=True)
class ProcedureStep:
    op: str
    args: dict = field(default_factory=dict)
    stop_when: str = ""

    def to_dict(self) -> dict:
        return {"op": self.op, "args": self.args, "stop_when": self.stop_when}

    @classmethod
    def from_dict(cls, obj: dict) -> "ProcedureStep":
        return cls(op=obj["op"], args=obj.get("args", {}), stop_when=obj.get("stop_when", ""))


@dataclass(frozen=True)
class Budgets:
    max_tool_calls: int = 0
    max_retries: int = 0
    max_iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "max_tool_calls": self.max_tool_calls,
            "max_retries": self.max_retries,
            "max_iterations": self.max_iterations,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Budgets":
        return cls(
            max_tool_calls=obj.get("max_tool_calls", 0),
            max_retries=obj.get("max_retries", 0),
            max_iterations=obj.get("max_iterations", 0),
        )


_PROC_REF_RE_DOC = 'procedure ref must look like "proc:<name>:v<int>"'


def parse_procedure_ref(ref: str) -> tuple[str, int]:
    """Split "proc:Name:v3" into ("Name", 3); raises ValueError otherwise."""
    parts = ref.split(":")
    if len(parts) != 3 or parts[0] != "proc" or not parts[1]:
        raise ValueError(f"{_PROC_REF_RE_DOC}: {ref!r}")
    if not parts[2].startswith("v") or not parts[2][1:].isdigit():
        raise ValueError(f"{_PROC_REF_RE_DOC}: {ref!r}")
    return parts[1], int(parts[2][1:])


def bump_procedure_ref(ref: str) -> str:
    name, version = parse_procedure_ref(ref)
    return f"proc:{name}:v{version + 1}"


@dataclass(frozen=True)
class ProcedureReflection:
    """How the task was carried out: a versioned, parameterized plan."""

    ref_id: str   # "proc:<Name>:v<K>"
    params: dict = field(default_factory=dict)
    steps: tuple[ProcedureStep, ...] = ()
    budgets: Budgets = Budgets()
    checkpoints: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "procedure_ref_id": self.ref_id,
            "params": self.params,
            "steps": [s.to_dict() for s in self.steps],
            "budgets": self.budgets.to_dict(),
            "checkpoints": list(self.checkpoints),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ProcedureReflection":
        return cls(
            ref_id=obj["procedure_ref_id"],
            params=obj.get("params", {}),
            steps=tuple(ProcedureStep.from_dict(s) for s in obj.get("steps", ())),
            budgets=Budgets.from_dict(obj.get("budgets", {})),
            checkpoints=tuple(obj.get("checkpoints", ())),
        )


@dataclass(frozen=True)
class EvidenceItem:
    """A content-addressed piece of supporting evidence."""

    kind: EvidenceKind
    locator: str
    content: str
    sha256: str
    n_bytes: int
    source_type: str = ""
    authority_score: float = 0.0

    @classmethod
    def from_content(
        cls,
        kind: EvidenceKind,
        locator: str,
        content: str,
        source_type: str = "",
        authority_score: float = 0.0,
    ) -> "EvidenceItem":
        data = content.encode("utf-8")
        return cls(
            kind=kind,
            locator=locator,
            content=content,
            sha256=hashlib.sha256(data).hexdigest(),
            n_bytes=len(data),
            source_type=source_type,
            authority_score=authority_score,
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "locator": self.locator,
            "content": self.content,
            "content_digest": {"sha256": self.sha256, "bytes": self.n_bytes},
            "trust": {"source_type": self.source_type, "authority_score": self.authority_score},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvidenceItem":
        digest = obj.get("content_digest", {})
        trust = obj.get("trust", {})
        return cls(
            kind=EvidenceKind(obj["kind"]),
            locator=obj.get("locator", ""),
            content=obj.get("content", ""),
            sha256=digest.get("sha256", ""),
            n_bytes=digest.get("bytes", 0),
            source_type=trust.get("source_type", ""),
            authority_score=trust.get("authority_score", 0.0),
        )


@dataclass(frozen=True)
class IterationStep:
    """One generate/validate round."""

    intent: IterationIntent
    artifact: str
    result: str
    validation: int   # 0 or 1
    feedback: str = ""

    def to_dict(self) -> dict:
        return {
            "intent": self.intent.value,
            "artifact": self.artifact,
            "result": self.result,
            "validation": self.validation,
            "feedback": self.feedback,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "IterationStep":
        return cls(
            intent=IterationIntent(obj["intent"]),
            artifact=obj.get("artifact", ""),
            result=obj.get("result", ""),
            validation=obj.get("validation", 0),
            feedback=obj.get("feedback", ""),
        )


@dataclass(frozen=True)
class ErrorEntry:
    """One diagnosed failure with its recovery bookkeeping."""

    error_class: ErrorClass
    step: int
    iteration: int
    hypothesis: str
    confidence: float
    recovery_procedure: RecoveryProcedure = RecoveryProcedure.ESCALATE
    recovery_outcome: RecoveryOutcome = RecoveryOutcome.FAILED_RECOVERY

    def to_dict(self) -> dict:
        return {
            "error_class": self.error_class.value,
            "occurred_at": {"step": self.step, "iteration": self.iteration},
            "root_cause": {"hypothesis": self.hypothesis, "confidence": self.confidence},
            "recovery_procedure": self.recovery_procedure.value,
            "recovery_outcome": self.recovery_outcome.value,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ErrorEntry":
        at = obj.get("occurred_at", {})
        cause = obj.get("root_cause", {})
        return cls(
            error_class=ErrorClass(obj["error_class"]),
            step=at.get("step", 0),
            iteration=at.get("iteration", 0),
            hypothesis=cause.get("hypothesis", ""),
            confidence=cause.get("confidence", 0.0),
            recovery_procedure=RecoveryProcedure(obj.get("recovery_procedure", "escalate")),
            recovery_outcome=RecoveryOutcome(obj.get("recovery_outcome", "failed_recovery")),
        )


@dataclass(frozen=True)
class PatchEntry:
    """A reusable correction keyed by the signature context that triggers it."""

    trigger_signature: tuple[str, ...]
    kind: PatchKind
    location: str
    new_logic: str
    rationale: str = ""
    utility_delta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "trigger_signature": list(self.trigger_signature),
            "patch": {
                "kind": self.kind.value,
                "location": self.location,
                "new_logic": self.new_logic,
            },
            "rationale": self.rationale,
            "utility_delta": self.utility_delta,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PatchEntry":
        patch = obj.get("patch", {})
        return cls(
            trigger_signature=tuple(obj.get("trigger_signature", ())),
            kind=PatchKind(patch["kind"]),
            location=patch.get("location", ""),
            new_logic=patch.get("new_logic", ""),
            rationale=obj.get("rationale", ""),
            utility_delta=obj.get("utility_delta", {}),
        )


@dataclass(frozen=True)
class Evaluation:
    """Oracle correctness plus teacher efficiency/completeness and overall q."""

    correctness: float
    efficiency: float
    completeness: float
    overall: float
    teacher_feedback: str = ""

    def to_dict(self) -> dict:
        return {
            "correctness": self.correctness,
            "efficiency": self.efficiency,
            "completeness": self.completeness,
            "overall": self.overall,
            "teacher_feedback": self.teacher_feedback,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Evaluation":
        return cls(
            correctness=obj["correctness"],
            efficiency=obj.get("efficiency", 0.0),
            completeness=obj.get("completeness", 0.0),
            overall=obj["overall"],
            teacher_feedback=obj.get("teacher_feedback", ""),
        )


# --------------------------------------------------------------------------
# quality and gating
# --------------------------------------------------------------------------

def compute_quality(
    correctness: float,
    efficiency: float,
    completeness: float,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
) -> float:
    """Weighted quality score.

    Raises:
        WeightSumError: weights are negative or do not sum to 1 (1e-9).
    """
    w_c, w_e, w_k = weights
    if w_c < 0 or w_e < 0 or w_k < 0:
        raise WeightSumError(f"negative weight in {weights}")
    if abs((w_c + w_e + w_k) - 1.0) > 1e-9:
        raise WeightSumError(f"weights {weights} sum to {w_c + w_e + w_k}, expected 1")
    return w_c * correctness + w_e * efficiency + w_k * completeness


def gate(q: float, theta: float = DEFAULT_THETA, oracle_reject: bool = False) -> ExperienceStatus:
    """Success/failure decision.  Boundary q == theta is successful; an
    explicit oracle rejection forces failure regardless of q."""
    if oracle_reject:
        return ExperienceStatus.FAILED
    return ExperienceStatus.SUCCESSFUL if q >= theta else ExperienceStatus.FAILED


# --------------------------------------------------------------------------
# the record
# --------------------------------------------------------------------------

@dataclass
class ExperienceRecord:
    """A complete experience: all six layers plus evaluation and status."""

    signature: StructuralSignature
    goal: GoalReflection
    procedure: ProcedureReflection
    evidence: tuple[EvidenceItem, ...]
    trace: tuple[IterationStep, ...]
    error_registry: tuple[ErrorEntry, ...]
    patches: tuple[PatchEntry, ...]
    evaluation: Evaluation
    status: ExperienceStatus
    oracle_overridden: bool = False
    node_id: str | None = None
    commit_seq: int = 0

    @property
    def quality(self) -> float:
        return self.evaluation.overall

    def retrieval_keys(self) -> dict:
        """The key layer: what indexes point at this record."""
        return {
            "goal_ops": list(self.signature.ops),
            "failure_modes": sorted({e.error_class.value for e in self.error_registry}),
            "domain_tags": [self.goal.domain] if self.goal.domain else [],
        }

    # ----- canonical serialization -----

    def to_dict(self) -> dict:
        """Field order is fixed; see to_document()."""
        return {
            "id": self.node_id,
            "signature": self.signature.to_dict(),
            "goal": self.goal.to_dict(),
            "procedure": self.procedure.to_dict(),
            "evidence": [e.to_dict() for e in self.evidence],
            "trace": [t.to_dict() for t in self.trace],
            "error_registry": [e.to_dict() for e in self.error_registry],
            "patches": [p.to_dict() for p in self.patches],
            "evaluation": self.evaluation.to_dict(),
            "status": self.status.value,
            "oracle_overridden": self.oracle_overridden,
            "retrieval_keys": self.retrieval_keys(),
            "commit_seq": self.commit_seq,
        }

    def to_document(self) -> str:
        """Canonical single-line JSON document (fixed field order).

        Embedding components were quantized to 9 significant digits when
        produced, so serialize -> parse -> serialize is byte-stable.
        """
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    def to_pretty(self) -> str:
        """Human-facing rendering with the same field order."""
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperienceRecord":
        try:
            return cls(
                signature=StructuralSignature.from_dict(obj.get("signature", {})),
                goal=GoalReflection.from_dict(obj["goal"]),
                procedure=ProcedureReflection.from_dict(obj["procedure"]),
                evidence=tuple(EvidenceItem.from_dict(e) for e in obj.get("evidence", ())),
                trace=tuple(IterationStep.from_dict(t) for t in obj.get("trace", ())),
                error_registry=tuple(
                    ErrorEntry.from_dict(e) for e in obj.get("error_registry", ())
                ),
                patches=tuple(PatchEntry.from_dict(p) for p in obj.get("patches", ())),
                evaluation=Evaluation.from_dict(obj["evaluation"]),
                status=ExperienceStatus(obj["status"]),
                oracle_overridden=obj.get("oracle_overridden", False),
                node_id=obj.get("id"),
                commit_seq=obj.get("commit_seq", 0),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedDocumentError(f"bad experience document: {exc}") from exc

    @classmethod
    def from_document(cls, text: str) -> "ExperienceRecord":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedDocumentError(str(exc)) from exc
        return cls.from_dict(obj)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def _in_unit(x: float) -> bool:
    return 0.0 <= x <= 1.0


def validate_experience(
    record: ExperienceRecord,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
    theta: float = DEFAULT_THETA,
) -> list[str]:
    """Check every record invariant; returns the violated clauses (empty = valid)."""
    problems: list[str] = []
    ev = record.evaluation

    for name, value in (
        ("correctness", ev.correctness),
        ("efficiency", ev.efficiency),
        ("completeness", ev.completeness),
        ("overall", ev.overall),
    ):
        if not _in_unit(value):
            problems.append(f"evaluation.{name} {value} outside [0, 1]")

    expected_q = compute_quality(ev.correctness, ev.efficiency, ev.completeness, weights)
    if abs(ev.overall - expected_q) > QUALITY_TOLERANCE:
        problems.append(
            f"quality mismatch: overall={ev.overall!r} but weighted sum is {expected_q!r}"
        )

    expected_status = gate(ev.overall, theta, record.oracle_overridden)
    if record.status != expected_status:
        problems.append(
            f"status {record.status.value} inconsistent with gate "
            f"(q={ev.overall}, theta={theta}, oracle_overridden={record.oracle_overridden})"
        )
    if record.oracle_overridden and record.status != ExperienceStatus.FAILED:
        problems.append("oracle_overridden records must be failed")

    last_rank = -1
    for i, step in enumerate(record.trace):
        if step.validation not in (0, 1):
            problems.append(f"trace[{i}].validation {step.validation} not in {{0, 1}}")
        if step.intent.rank < last_rank:
            problems.append(
                f"trace[{i}] intent {step.intent.value} decreases "
                "(exploration < refinement < error_correction)"
            )
        last_rank = max(last_rank, step.intent.rank)

    for i, item in enumerate(record.evidence):
        data = item.content.encode("utf-8")
        if hashlib.sha256(data).hexdigest() != item.sha256:
            problems.append(f"evidence[{i}] content digest mismatch (content-addressed clause)")
        if item.n_bytes != len(data):
            problems.append(f"evidence[{i}] byte count {item.n_bytes} != {len(data)}")
        if not _in_unit(item.authority_score):
            problems.append(f"evidence[{i}].authority_score outside [0, 1]")

    for i, err in enumerate(record.error_registry):
        if not _in_unit(err.confidence):
            problems.append(f"error_registry[{i}].confidence outside [0, 1]")

    try:
        parse_procedure_ref(record.procedure.ref_id)
    except ValueError as exc:
        problems.append(str(exc))

    return problems


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------

def assemble_experience(
    goal: GoalReflection,
    procedure: ProcedureReflection,
    trace: tuple[IterationStep, ...],
    correctness: float,
    efficiency: float,
    completeness: float,
    teacher_feedback: str = "",
    oracle_reject: bool = False,
    evidence: tuple[EvidenceItem, ...] = (),
    error_registry: tuple[ErrorEntry, ...] = (),
    patches: tuple[PatchEntry, ...] = (),
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
    theta: float = DEFAULT_THETA,
    ground_truth: str | None = None,
) -> ExperienceRecord:
    """Build a gated, validated record from raw task outputs.

    When ground_truth is supplied, teacher feedback containing it verbatim
    is rejected — judge commentary must never leak the expected answer.

    Raises:
        InvariantError: validation found violations (message names them).
    """
    if ground_truth and teacher_feedback and ground_truth in teacher_feedback:
        raise InvariantError("teacher_feedback leaks the ground-truth answer")
    q = compute_quality(correctness, efficiency, completeness, weights)
    status = gate(q, theta, oracle_reject)
    overridden = bool(oracle_reject) and q >= theta
    record = ExperienceRecord(
        signature=goal.signature,
        goal=goal,
        procedure=procedure,
        evidence=evidence,
        trace=trace,
        error_registry=error_registry,
        patches=patches,
        evaluation=Evaluation(
            correctness=correctness,
            efficiency=efficiency,
            completeness=completeness,
            overall=q,
            teacher_feedback=teacher_feedback,
        ),
        status=status,
        oracle_overridden=overridden,
    )
    problems = validate_experience(record, weights, theta)
    if problems:
        raise InvariantError("; ".join(problems))
    return record


# --------------------------------------------------------------------------
# prompt compression
# --------------------------------------------------------------------------

def compress_for_prompt(record: ExperienceRecord, budget: int) -> str:
    """Render the record for an agent prompt within a character budget.

    Sections in priority order: task description, signature, procedure
    steps, teacher feedback, then (for failed records) error classes and
    patches, and finally an evidence summary (kinds and locators only —
    never content bytes, never trace artifacts).  Whole sections are
    dropped lowest-priority-first until the text fits; as a last resort the
    description itself is truncated.

    Raises:
        BudgetTooSmallError: budget < 200.
    """
    if budget < MIN_PROMPT_BUDGET:
        raise BudgetTooSmallError(f"budget {budget} < {MIN_PROMPT_BUDGET}")

    sections: list[str] = [f"task: {record.goal.task_description}"]
    if record.signature.ops:
        sections.append("signature: " + " -> ".join(record.signature.ops))
    if record.procedure.steps:
        lines = ["procedure:"]
        for i, step in enumerate(record.procedure.steps, 1):
            suffix = f" until {step.stop_when}" if step.stop_when else ""
            lines.append(f"  {i}. {step.op}{suffix}")
        sections.append("\n".join(lines))
    if record.evaluation.teacher_feedback:
        sections.append(f"teacher: {record.evaluation.teacher_feedback}")
    if record.status == ExperienceStatus.FAILED:
        if record.error_registry:
            parts = [
                f"{e.error_class.value}@step{e.step}" for e in record.error_registry
            ]
            sections.append("errors: " + ", ".join(parts))
        if record.patches:
            parts = [
                f"{p.kind.value}@{p.location}: {p.new_logic}" for p in record.patches
            ]
            sections.append("patches: " + "; ".join(parts))
    if record.evidence:
        parts = [f"{e.kind.value} {e.locator}" for e in record.evidence]
        sections.append("evidence: " + "; ".join(parts))

    while len(sections) > 1 and len("\n".join(sections)) > budget:
        sections.pop()
    text = "\n".join(sections)
    if len(text) > budget:
        text = text[:budget]
    return text
