"""Namespace-scoped memory store: graph + embeddings + index + resolution.

A MemoryStore owns one namespace directory (``<root>/<namespace>/log.ndjson``)
and wires together the persistent graph, the deterministic embedder, the
vector index (rebuilt from node payloads on load), the operation canon, the
entity resolver, and the signature extractor.  It also carries the
cross-cutting caches that retrieval and ingest share: the structural
similarity memo and the monotone commit counter.
"""

from __future__ import annotations

import threading
from dataclasses import replace
from pathlib import Path

import numpy as np

from .embedding import DEFAULT_DIM, HashEmbedder, VectorIndex, cosine
from .experience import ExperienceRecord
from .graph import GraphNode, GraphStore, NodeKind
from .resolver import EntityResolver
from .signatures import OperationCanon, SignatureExtractor, StructuralSignature

LOG_NAME = "log.ndjson"


def list_namespaces(root: Path) -> list[str]:
    """Namespaces under ``root`` (directories holding a graph log)."""
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir() if (p / LOG_NAME).is_file())


class MemoryStore:
    """All memory state for one namespace."""

    def __init__(
        self,
        root: Path | str,
        namespace: str = "default",
        dim: int = DEFAULT_DIM,
        canon: OperationCanon | None = None,
    ):
        self.root = Path(root)
        self.namespace = namespace
        self.dir = self.root / namespace
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()

        self.graph = GraphStore(self.dir / LOG_NAME)
        self.embedder = HashEmbedder(dim=dim)
        self.index = VectorIndex(dim=dim)
        self._rebuild_index()
        self.canon = canon or OperationCanon.default()
        self.resolver = EntityResolver(self.graph, self.embedder, self.index)
        self.extractor = SignatureExtractor(self.graph, self.resolver, self.canon)

        self._sigma_cache: dict[tuple[str, str], float] = {}
        self._signature_cache: dict[str, StructuralSignature] = {}
        self._live_experiences: tuple[int, list[GraphNode]] | None = None
        self._commit_counter = sum(
            1 for _ in self.graph.nodes(NodeKind.EXPERIENCE)
        )

    def _rebuild_index(self) -> None:
        """Re-insert every embedded node; payload vectors are already quantized,
        so reload reproduces live cosines exactly."""
        for node in self.graph.nodes():
            emb = node.payload.get("embedding")
            if emb:
                self.index.insert(
                    node.id,
                    np.asarray(emb, dtype=np.float64),
                    {
                        "kind": node.kind.value,
                        "domain": node.domain,
                        "archived": node.archived,
                    },
                )

    # ----- commit bookkeeping -----

    @property
    def commit_seq(self) -> int:
        """Number of experiences committed so far (the memory clock)."""
        return self._commit_counter

    def add_experience_record(self, record: ExperienceRecord) -> str:
        """Insert an experience node for a validated record.

        Assigns the record's commit_seq and node id.  Relationship edges
        (similarity, dominance, entity usage) are the ingest gate's job —
        this is only the node + index primitive.
        """
        with self._lock:
            record.commit_seq = self._commit_counter
            vector = np.asarray(record.goal.task_embedding, dtype=np.float64)
            description = record.goal.task_description
            if vector.size == 0 and description.strip():
                # records assembled outside the workflow arrive unembedded
                vector = self.embedder.embed(description)
                record.goal = replace(record.goal, task_embedding=tuple(float(x) for x in vector))
            node = GraphNode(
                kind=NodeKind.EXPERIENCE,
                title=description[:80] if description.strip() else "experience",
                description=description or "experience",
                domain=record.goal.domain,
                payload={
                    "document": record.to_document(),
                    "embedding": [float(x) for x in vector],
                    "quality": record.evaluation.overall,
                    "status": record.status.value,
                    "fingerprint": record.signature.fingerprint,
                    "ops": list(record.signature.ops),
                    "error_classes": record.retrieval_keys()["failure_modes"],
                    "commit_seq": record.commit_seq,
                },
            )
            node_id = self.graph.add_node(node)
            record.node_id = node_id
            self.index.insert(
                node_id,
                vector,
                {
                    "kind": NodeKind.EXPERIENCE.value,
                    "domain": node.domain,
                    "archived": False,
                },
            )
            self._commit_counter += 1
            return node_id

    # ----- experience accessors -----

    def experience(self, node_id: str) -> ExperienceRecord:
        """Parse the full record back out of a node payload."""
        node = self.graph.get_node(node_id)
        record = ExperienceRecord.from_document(node.payload["document"])
        record.node_id = node.id
        return record

    def experience_nodes(self, include_archived: bool = False) -> list[GraphNode]:
        """Experience nodes in commit order."""
        nodes = self.graph.nodes(NodeKind.EXPERIENCE)
        if not include_archived:
            nodes = (n for n in nodes if not n.archived)
        return sorted(nodes, key=lambda n: n.id)

    def recent_experience_nodes(self, window: int = 1000) -> list[GraphNode]:
        """The latest ``window`` non-archived experiences (commit order)."""
        live = self.experience_nodes(include_archived=False)
        return live[-window:]

    # ----- shared caches -----

    def sim_sigma(self, a: StructuralSignature, b: StructuralSignature) -> float:
        """Structural similarity, memoized by fingerprint pair (symmetric)."""
        key = (a.fingerprint, b.fingerprint)
        if key[0] > key[1]:
            key = (key[1], key[0])
        hit = self._sigma_cache.get(key)
        if hit is None:
            hit = a.similarity(b)
            self._sigma_cache[key] = hit
        return hit

    def node_signature(self, node: GraphNode) -> StructuralSignature:
        """Signature of a committed experience (ops never change post-commit,
        so the parse is memoized by node id)."""
        sig = self._signature_cache.get(node.id)
        if sig is None:
            sig = StructuralSignature(ops=tuple(node.payload.get("ops", ())))
            self._signature_cache[node.id] = sig
        return sig

    def archive_node(self, node_id: str) -> None:
        """Archive a node in the graph and mirror the flag into the index
        metadata, keeping index predicates lookup-free."""
        self.graph.set_archived(node_id)
        if node_id in self.index:
            self.index.update_metadata(node_id, archived=True)

    def semantic_similarity(self, query: np.ndarray, node_id: str) -> float:
        return cosine(query, self.index.vector(node_id))

    # ----- persistence -----

    def export(self, path: Path | str) -> None:
        self.graph.export(Path(path))

    def import_log(self, path: Path | str) -> int:
        """Load an exported snapshot into this (empty) namespace."""
        count = self.graph.import_log(Path(path))
        self._rebuild_index()
        self._commit_counter = sum(
            1 for _ in self.graph.nodes(NodeKind.EXPERIENCE)
        )
        self.resolver.clear_cache()
        self._sigma_cache.clear()
        self._signature_cache.clear()
        return count

    def close(self) -> None:
        self.graph.close()
