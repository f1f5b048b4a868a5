"""Experience ingestion: the gate between finished tasks and the graph.

Committing a record is a transaction: validate the record, materialize its
operation chain and entity usage in the graph, insert the experience node,
then link it to recent memory — semantic edges for cosine > 0.85, structural
edges for signature similarity >= 0.6, and same-domain dominance (signature
similarity > 0.95 with strictly higher quality) which supersedes and archives
the weaker record.  Nothing is ever deleted.

Also home to the structured-feedback decomposer, a small line grammar that
turns validator/judge commentary into typed error-registry and patch
entries.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .errors import InvariantError
from .experience import (
    DEFAULT_THETA,
    DEFAULT_WEIGHTS,
    ErrorClass,
    ErrorEntry,
    ExperienceRecord,
    PatchEntry,
    PatchKind,
    RecoveryOutcome,
    RecoveryProcedure,
    compute_quality,
    gate,
    validate_experience,
)
from .graph import EdgeKind, NodeKind
from .resolver import GLOBAL_SCOPE
from .store import MemoryStore

__all__ = [
    "EvaluationInput",
    "IngestConfig",
    "IngestGate",
    "compute_quality",
    "decompose_feedback",
    "gate",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvaluationInput:
    """What the judging phase hands to assembly/ingest."""

    correctness: float
    efficiency: float = 0.0
    completeness: float = 0.0
    teacher_feedback: str = ""
    oracle_reject: bool = False


# --------------------------------------------------------------------------
# structured feedback grammar
# --------------------------------------------------------------------------

_ERROR_RE = re.compile(r"^ERROR:\s*(\w+)\s*@step\s*(\d+)(?:\s+iter\s*(\d+))?\s*$")
_CAUSE_RE = re.compile(r"^CAUSE:\s*(.+?)\s*\(([0-9.]+)\)\s*$")
_RECOVERY_RE = re.compile(r"^RECOVERY:\s*(\w+)\s*->\s*(\w+)\s*$")
_PATCH_RE = re.compile(r"^PATCH:\s*(\w+)\s*@(\S+?):\s*(.+)$")


def decompose_feedback(
    text: str, trigger_signature: tuple[str, ...] = ()
) -> tuple[tuple[ErrorEntry, ...], tuple[PatchEntry, ...]]:
    """Parse structured feedback lines into error and patch entries.

    Grammar (one directive per line, free text between lines is ignored)::

        ERROR: <error_class> @step <N> [iter <J>]
        CAUSE: <hypothesis> (<confidence>)
        RECOVERY: <procedure> -> <outcome>
        PATCH: <kind> @<location>: <new logic>

    CAUSE and RECOVERY attach to the most recent ERROR.  Unknown error or
    patch kinds are logged and skipped rather than raised — feedback is
    untrusted input.
    """
    errors: list[dict] = []
    patches: list[PatchEntry] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        m = _ERROR_RE.match(line)
        if m:
            klass, step, iteration = m.group(1), int(m.group(2)), int(m.group(3) or 0)
            try:
                parsed = ErrorClass(klass)
            except ValueError:
                logger.warning("unknown error class %r in feedback; skipping", klass)
                errors.append({"skip": True})
                continue
            errors.append(
                {
                    "error_class": parsed,
                    "step": step,
                    "iteration": iteration,
                    "hypothesis": "",
                    "confidence": 0.0,
                    "recovery_procedure": RecoveryProcedure.ESCALATE,
                    "recovery_outcome": RecoveryOutcome.FAILED_RECOVERY,
                }
            )
            continue
        m = _CAUSE_RE.match(line)
        if m and errors:
            if not errors[-1].get("skip"):
                errors[-1]["hypothesis"] = m.group(1)
                errors[-1]["confidence"] = min(1.0, float(m.group(2)))
            continue
        m = _RECOVERY_RE.match(line)
        if m and errors:
            if not errors[-1].get("skip"):
                try:
                    errors[-1]["recovery_procedure"] = RecoveryProcedure(m.group(1))
                    errors[-1]["recovery_outcome"] = RecoveryOutcome(m.group(2))
                except ValueError:
                    logger.warning("unknown recovery %r in feedback; skipping", line)
            continue
        m = _PATCH_RE.match(line)
        if m:
            try:
                kind = PatchKind(m.group(1))
            except ValueError:
                logger.warning("unknown patch kind %r in feedback; skipping", m.group(1))
                continue
            patches.append(
                PatchEntry(
                    trigger_signature=trigger_signature,
                    kind=kind,
                    location=m.group(2),
                    new_logic=m.group(3).strip(),
                )
            )
    entries = tuple(
        ErrorEntry(**e) for e in errors if not e.get("skip")
    )
    return entries, tuple(patches)


# --------------------------------------------------------------------------
# the ingest gate
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IngestConfig:
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    theta: float = DEFAULT_THETA
    semantic_edge_threshold: float = 0.85   # similar_to requires cos strictly above
    structural_edge_threshold: float = 0.6  # structurally_similar_to, inclusive
    dominance_threshold: float = 0.95       # same-domain supersedes, strictly above
    similarity_window: int = 1000           # how far back linking looks


class IngestGate:
    """Commits validated experience records into a MemoryStore."""

    def __init__(self, store: MemoryStore, config: IngestConfig | None = None):
        self.store = store
        self.config = config or IngestConfig()

    def commit(self, record: ExperienceRecord) -> str:
        """Run the full ingest transaction; returns the new node id.

        Raises:
            InvariantError: the record violates its schema contracts.
        """
        problems = validate_experience(record, self.config.weights, self.config.theta)
        if problems:
            raise InvariantError("; ".join(problems))
        store = self.store
        with store.graph.deferred_log():
            prior = store.recent_experience_nodes(self.config.similarity_window)
            node_id = store.add_experience_record(record)
            self._materialize_operations(record)
            self._link_entities(record, node_id)
            self._link_similar(record, node_id, prior)
        return node_id

    # ----- graph materialization -----

    def _materialize_operations(self, record: ExperienceRecord) -> None:
        """Ensure every op in the signature exists, with its followed_by chain."""
        from .signatures import OP_PREFIX

        op_ids: list[str] = []
        with self.store.resolver.batch():
            for token in record.signature.ops:
                name = token[len(OP_PREFIX):]
                outcome = self.store.resolver.resolve(
                    name, NodeKind.OPERATION, GLOBAL_SCOPE, canonical=name
                )
                op_ids.append(outcome.node_id)
        for left, right in zip(op_ids, op_ids[1:]):
            if left != right and not self.store.graph.has_edge(
                left, right, EdgeKind.FOLLOWED_BY
            ):
                self.store.graph.add_edge(left, right, EdgeKind.FOLLOWED_BY)

    def _link_entities(self, record: ExperienceRecord, node_id: str) -> None:
        for entity_id in record.goal.entity_ids:
            if not self.store.graph.has_node(entity_id):
                logger.warning(
                    "experience %s references unknown entity %s; skipping edge",
                    node_id, entity_id,
                )
                continue
            if not self.store.graph.has_edge(node_id, entity_id, EdgeKind.USES_ENTITY):
                self.store.graph.add_edge(node_id, entity_id, EdgeKind.USES_ENTITY)

    def _link_similar(self, record, node_id: str, prior: list) -> None:
        """Connect the new record to recent memory; apply dominance."""
        cfg = self.config
        store = self.store
        new_vec = store.index.vector(node_id)
        new_sig = record.signature
        new_q = record.evaluation.overall

        def live_experience(entry_id: str, meta: dict) -> bool:
            return (
                meta.get("kind") == NodeKind.EXPERIENCE.value
                and not meta.get("archived")
            )

        # One vectorized pass over the index covers the whole window; the
        # per-node fallback only fires when the window is narrower than the
        # live population.
        cos_map = dict(
            store.index.search(new_vec, k=len(prior) + 1, where=live_experience)
        )
        for old in prior:
            if old.id == node_id:
                continue
            cos = cos_map.get(old.id)
            if cos is None:
                cos = store.semantic_similarity(new_vec, old.id)
            cos = min(1.0, max(-1.0, cos))
            if cos > cfg.semantic_edge_threshold:
                store.graph.add_edge(node_id, old.id, EdgeKind.SIMILAR_TO, weight=cos)
            sigma = store.sim_sigma(new_sig, store.node_signature(old))
            if sigma >= cfg.structural_edge_threshold:
                store.graph.add_edge(
                    node_id, old.id, EdgeKind.STRUCTURALLY_SIMILAR_TO, weight=sigma
                )
            if (
                sigma > cfg.dominance_threshold
                and old.domain == record.goal.domain
                and float(old.payload.get("quality", 0.0)) < new_q
                and not store.graph.is_superseded(old.id)
            ):
                store.graph.add_edge(node_id, old.id, EdgeKind.SUPERSEDES)
                store.archive_node(old.id)
