"""Structural signatures: canonical operation sequences and LCS similarity.

A structural signature is the ordered, type-prefixed sequence of canonical
operations a procedure performs ("op:entity_resolution", ...).  Signatures
abstract away surface wording and entity bindings, so two procedures from
unrelated domains can be recognized as the same reasoning pattern.

Similarity between signatures a and b is |LCS(a, b)| / min(|a|, |b|), and 0
when either is empty.  Note that the min-normalization makes any prefix (or
subsequence) containment score 1.0 — intentional: a short plan embedded in
a longer one is a full structural match for reuse purposes.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from .errors import MalformedDocumentError
from .graph import EdgeKind, GraphNode, GraphStore, NodeKind
from .resolver import GLOBAL_SCOPE, EntityResolver

logger = logging.getLogger(__name__)

OP_PREFIX = "op:"

_NORM_RE = re.compile(r"\s+")
_SLUG_RE = re.compile(r"[^a-z0-9]+")


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence of two sequences.

    Classic dynamic program, O(len(a) * len(b)) time, one-row memory.
    Elements are compared by equality only.
    """
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        append = cur.append
        for j, y in enumerate(b, 1):
            if x == y:
                append(prev[j - 1] + 1)
            else:
                up, left = prev[j], cur[j - 1]
                append(up if up >= left else left)
        prev = cur
    return prev[-1]


def structural_similarity(a: Sequence[str], b: Sequence[str]) -> float:
    """LCS similarity normalized by the shorter sequence; 0 if either is empty."""
    if not a or not b:
        return 0.0
    return lcs_length(a, b) / min(len(a), len(b))


def fingerprint(ops: Sequence[str]) -> str:
    """Stable hash of a canonical op sequence."""
    joined = "\x1f".join(ops)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class StructuralSignature:
    """Ordered canonical operation tokens plus their fingerprint."""

    ops: tuple[str, ...]

    def __post_init__(self):
        for op in self.ops:
            if not op.startswith(OP_PREFIX):
                raise ValueError(f"signature element {op!r} missing {OP_PREFIX!r} prefix")

    @cached_property
    def fingerprint(self) -> str:
        # memoized: this is the key for every sigma cache, so it is asked for
        # once per comparison and ops never change on a frozen signature
        return fingerprint(self.ops)

    def __len__(self) -> int:
        return len(self.ops)

    def __bool__(self) -> bool:
        return bool(self.ops)

    def similarity(self, other: "StructuralSignature") -> float:
        return structural_similarity(self.ops, other.ops)

    def to_dict(self) -> dict:
        return {"ops": list(self.ops), "fingerprint": self.fingerprint}

    @classmethod
    def from_dict(cls, obj: dict) -> "StructuralSignature":
        return cls(ops=tuple(obj.get("ops", ())))

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "StructuralSignature":
        """Build from bare canonical names, adding the type prefix."""
        return cls(
            ops=tuple(
                n if n.startswith(OP_PREFIX) else OP_PREFIX + n for n in names
            )
        )


EMPTY_SIGNATURE = StructuralSignature(ops=())


class OperationCanon:
    """Synonym table mapping step phrasings onto canonical operations.

    Loaded from a plain-text config: bare lines declare canonical ops,
    "synonym -> canonical" lines map one normalized phrasing each.
    """

    def __init__(self, synonyms: dict[str, str], canonical: set[str]):
        self.synonyms = dict(synonyms)
        self.canonical_ops = set(canonical)

    @staticmethod
    def normalize(text: str) -> str:
        return _NORM_RE.sub(" ", text.strip().lower())

    @staticmethod
    def slug(text: str) -> str:
        return _SLUG_RE.sub("_", text.strip().lower()).strip("_")

    def canonical(self, step_text: str) -> str:
        """Canonical op name for a raw step description.

        Synonym hits map directly; otherwise the slugged text is used (a
        known canonical slug stays itself, a novel one becomes a new op).
        """
        norm = self.normalize(step_text)
        if norm in self.synonyms:
            return self.synonyms[norm]
        slug = self.slug(step_text)
        return slug

    @classmethod
    def parse(cls, lines: Iterable[str], origin: str = "<memory>") -> "OperationCanon":
        synonyms: dict[str, str] = {}
        canonical: set[str] = set()
        for lineno, raw in enumerate(lines, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "->" in line:
                syn, _, target = line.partition("->")
                syn = cls.normalize(syn)
                target = target.strip()
                if not syn or not target or "->" in target:
                    raise MalformedDocumentError(
                        f"{origin}:{lineno}: expected 'synonym -> canonical', got {raw!r}"
                    )
                if syn in synonyms and synonyms[syn] != target:
                    raise MalformedDocumentError(
                        f"{origin}:{lineno}: synonym {syn!r} already maps to "
                        f"{synonyms[syn]!r}, cannot remap to {target!r}"
                    )
                synonyms[syn] = target
                canonical.add(target)
            else:
                canonical.add(line)
        return cls(synonyms, canonical)

    @classmethod
    def from_file(cls, path: Path) -> "OperationCanon":
        with open(path, encoding="utf-8") as fp:
            return cls.parse(fp, origin=str(path))

    @classmethod
    def default(cls) -> "OperationCanon":
        """The canon shipped as package data."""
        import importlib.resources

        ref = importlib.resources.files("expmem.data").joinpath("operation_canon.txt")
        return cls.parse(ref.read_text(encoding="utf-8").splitlines(), origin=str(ref))


@dataclass
class RawStep:
    """One raw procedural step plus optional graph metadata."""

    text: str
    entities: tuple[str, ...] = ()
    properties: tuple[str, ...] = ()
    topic: str | None = None


@dataclass
class ExtractionResult:
    """Signature plus the graph bindings made (or observed) on the way."""

    signature: StructuralSignature
    op_node_ids: tuple[str, ...] = ()
    entity_ids: tuple[str, ...] = ()
    topic_ids: tuple[str, ...] = ()


class SignatureExtractor:
    """Derive structural signatures from raw steps, wiring the graph as it goes.

    In write mode each step becomes (or reuses) an Operation node, with
    FOLLOWED_BY edges between consecutive ops; step metadata adds Entity nodes,
    entity->property RELATES_TO edges, op->property USES edges, and per-step
    SubTask nodes tied to their TaskTopic via MEMBER_OF.  In dry mode only the
    canonical token sequence is computed, resolved read-only against the
    current store snapshot.
    """

    def __init__(self, store: GraphStore, resolver: EntityResolver, canon: OperationCanon):
        self.store = store
        self.resolver = resolver
        self.canon = canon

    def _op_token(self, step: RawStep, write: bool) -> tuple[str, str | None]:
        """Canonical token (with prefix) and node id (None in dry mode)."""
        name = self.canon.canonical(step.text)
        mention = name if name in self.canon.canonical_ops else OperationCanon.normalize(step.text)
        if write:
            outcome = self.resolver.resolve(
                mention,
                NodeKind.OPERATION,
                GLOBAL_SCOPE,
                canonical=name,
                description=f"abstract operation: {name}",
            )
        else:
            outcome = self.resolver.peek(mention, NodeKind.OPERATION, GLOBAL_SCOPE)
        canonical = outcome.canonical if outcome.node_id is not None else name
        token = canonical if canonical.startswith(OP_PREFIX) else OP_PREFIX + canonical
        return token, outcome.node_id

    def tokens(self, steps: Sequence[RawStep]) -> StructuralSignature:
        """Dry extraction: signature only, no graph writes."""
        return StructuralSignature(
            ops=tuple(self._op_token(step, write=False)[0] for step in steps)
        )

    def extract(self, steps: Sequence[RawStep], domain: str) -> ExtractionResult:
        """Full extraction: signature plus graph construction side effects."""
        tokens: list[str] = []
        op_ids: list[str] = []
        entity_ids: list[str] = []
        topic_ids: list[str] = []
        prev_op: str | None = None
        for step in steps:
            token, op_id = self._op_token(step, write=True)
            tokens.append(token)
            op_ids.append(op_id)
            if prev_op is not None and prev_op != op_id:
                if not self.store.has_edge(prev_op, op_id, EdgeKind.FOLLOWED_BY):
                    self.store.add_edge(prev_op, op_id, EdgeKind.FOLLOWED_BY)
            prev_op = op_id

            prop_ids = []
            for prop in step.properties:
                pr = self.resolver.resolve(
                    prop, NodeKind.ENTITY, domain,
                    description=f"property mentioned in step {step.text!r}",
                    payload_extra={"role": "property"},
                )
                prop_ids.append(pr.node_id)
                if not self.store.has_edge(op_id, pr.node_id, EdgeKind.USES):
                    self.store.add_edge(op_id, pr.node_id, EdgeKind.USES)
            for mention in step.entities:
                ent = self.resolver.resolve(
                    mention, NodeKind.ENTITY, domain,
                    description=f"entity mentioned in step {step.text!r}",
                )
                if ent.node_id not in entity_ids:
                    entity_ids.append(ent.node_id)
                for pid in prop_ids:
                    if not self.store.has_edge(ent.node_id, pid, EdgeKind.RELATES_TO):
                        self.store.add_edge(ent.node_id, pid, EdgeKind.RELATES_TO)
            if step.topic:
                topic_id = self._topic_node(step.topic, domain)
                if topic_id not in topic_ids:
                    topic_ids.append(topic_id)
                sub_id = self._subtask_node(step.text, domain, op_id, topic_id)
                if not self.store.has_edge(sub_id, op_id, EdgeKind.USES):
                    self.store.add_edge(sub_id, op_id, EdgeKind.USES)
                if not self.store.has_edge(sub_id, topic_id, EdgeKind.MEMBER_OF):
                    self.store.add_edge(sub_id, topic_id, EdgeKind.MEMBER_OF)
        return ExtractionResult(
            signature=StructuralSignature(ops=tuple(tokens)),
            op_node_ids=tuple(op_ids),
            entity_ids=tuple(entity_ids),
            topic_ids=tuple(topic_ids),
        )

    def _subtask_node(self, text: str, domain: str, op_id: str, topic_id: str) -> str:
        """Get or create the Subtask for a step under a given op and topic."""
        for node in self.store.nodes(NodeKind.SUBTASK):
            if (
                node.description == text
                and node.domain == domain
                and self.store.has_edge(node.id, op_id, EdgeKind.USES)
                and self.store.has_edge(node.id, topic_id, EdgeKind.MEMBER_OF)
            ):
                return node.id
        return self.store.add_node(GraphNode(
            kind=NodeKind.SUBTASK,
            title=text[:80],
            description=text,
            domain=domain,
        ))

    def _topic_node(self, topic: str, domain: str) -> str:
        """Get or create a TaskTopic node by title."""
        for node in self.store.nodes(NodeKind.TASK_TOPIC):
            if node.title == topic:
                return node.id
        return self.store.add_node(GraphNode(
            kind=NodeKind.TASK_TOPIC,
            title=topic,
            description=f"task topic: {topic}",
            domain=domain,
        ))
