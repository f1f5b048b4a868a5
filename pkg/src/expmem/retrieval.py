"""Hybrid experience retrieval: semantic + structural + graph proximity.

Three candidate channels feed one composite ranking:

* semantic — top-k cosine neighbours of the task description (floor 0.3);
* structural — experiences whose signature similarity is >= 0.6;
* graph — nodes within two hops of any seed (the semantic hits plus the
  top structural hits) over derived_from / uses_entity /
  structurally_similar_to edges; seeds themselves score 0 on this channel.

Every candidate is scored as

    score = 0.35*sem + 0.30*sig + 0.10*prox + 0.15*quality + 0.10*recency

with components clamped to [0, 1]; recency decays as 2^(-age/200) in commit
units.  Disabling a channel zeroes its component (weights are left intact so
scores stay comparable across configurations).  Superseded duplicates
collapse to their latest version, archived records never surface, and ties
break on node id.  The result is dual-track: top-3 successful experiences to
imitate and top-2 failed ones to avoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import WeightSumError
from .experience import ExperienceStatus, compress_for_prompt
from .graph import EdgeKind, NodeKind
from .signatures import StructuralSignature
from .store import MemoryStore

PROXIMITY_EDGE_KINDS = (
    EdgeKind.DERIVED_FROM,
    EdgeKind.USES_ENTITY,
    EdgeKind.STRUCTURALLY_SIMILAR_TO,
)

SCORE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class RetrievalConfig:
    """Knobs for the hybrid retriever (defaults are the tuned operating point)."""

    weights: tuple[float, float, float, float, float] = (0.35, 0.30, 0.10, 0.15, 0.10)
    tau_sigma: float = 0.6
    semantic_k: int = 10
    semantic_floor: float = 0.3
    structural_seed_k: int = 10
    k_positive: int = 3
    k_negative: int = 2
    recency_half_life: float = 200.0
    hop_decay: tuple[float, ...] = (1.0, 0.5)
    enable_semantic: bool = True
    enable_structural: bool = True
    enable_graph: bool = True

    def __post_init__(self):
        if any(w < 0 for w in self.weights):
            raise WeightSumError(f"negative retrieval weight in {self.weights}")
        if abs(sum(self.weights) - 1.0) > SCORE_TOLERANCE:
            raise WeightSumError(
                f"retrieval weights {self.weights} sum to {sum(self.weights)}, expected 1"
            )
        if not 0.0 <= self.tau_sigma <= 1.0:
            raise ValueError(f"tau_sigma {self.tau_sigma} outside [0, 1]")
        if self.recency_half_life <= 0:
            raise ValueError("recency_half_life must be positive")

    @property
    def max_hops(self) -> int:
        return len(self.hop_decay)


@dataclass(frozen=True)
class ScoreBreakdown:
    """Per-component scores; ``total`` must equal the weighted sum."""

    semantic: float
    structural: float
    proximity: float
    quality: float
    recency: float
    weights: tuple[float, float, float, float, float]
    total: float

    def __post_init__(self):
        for name, value in (
            ("semantic", self.semantic),
            ("structural", self.structural),
            ("proximity", self.proximity),
            ("quality", self.quality),
            ("recency", self.recency),
        ):
            if not 0.0 <= value <= 1.0 + SCORE_TOLERANCE:
                raise ValueError(f"score component {name}={value} outside [0, 1]")
        expected = (
            self.weights[0] * self.semantic
            + self.weights[1] * self.structural
            + self.weights[2] * self.proximity
            + self.weights[3] * self.quality
            + self.weights[4] * self.recency
        )
        if abs(expected - self.total) > SCORE_TOLERANCE:
            raise ValueError(f"total {self.total} != weighted sum {expected}")


@dataclass
class ScoredExperience:
    node_id: str
    status: ExperienceStatus
    breakdown: ScoreBreakdown
    domain: str
    entity_bindings: dict[str, str] = field(default_factory=dict)

    @property
    def score(self) -> float:
        return self.breakdown.total


@dataclass
class RetrievalBundle:
    """Dual-track retrieval result plus channel diagnostics."""

    query: str
    positives: list[ScoredExperience]
    negatives: list[ScoredExperience]
    diagnostics: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.positives or self.negatives)

    def all_hits(self) -> list[ScoredExperience]:
        return [*self.positives, *self.negatives]

    def to_text(self, store: MemoryStore, item_budget: int = 400) -> str:
        """Prompt-ready rendering.  Uses only the compressed record views —
        no trace artifacts and no evidence contents ever appear here."""
        lines: list[str] = []
        if self.positives:
            lines.append("== prior successes (imitate) ==")
            for i, hit in enumerate(self.positives, 1):
                b = hit.breakdown
                lines.append(
                    f"[{i}] {hit.node_id} score={b.total:.3f} "
                    f"(sem={b.semantic:.2f} sig={b.structural:.2f} "
                    f"prox={b.proximity:.2f} q={b.quality:.2f} rec={b.recency:.2f})"
                )
                lines.append(compress_for_prompt(store.experience(hit.node_id), item_budget))
                rebinds = [
                    f"rebind {old} -> {new}"
                    for old, new in sorted(hit.entity_bindings.items())
                    if old != new
                ]
                lines.extend(rebinds)
        if self.negatives:
            lines.append("== prior failures (avoid) ==")
            for i, hit in enumerate(self.negatives, 1):
                b = hit.breakdown
                lines.append(f"[{i}] {hit.node_id} score={b.total:.3f}")
                lines.append(compress_for_prompt(store.experience(hit.node_id), item_budget))
        return "\n".join(lines)


class Retriever:
    """Stateless query engine over a MemoryStore."""

    def __init__(self, store: MemoryStore, config: RetrievalConfig | None = None):
        self.store = store
        self.config = config or RetrievalConfig()
        # Keep an incrementally-maintained adjacency over the proximity edge
        # kinds so each retrieve() walks a prebuilt projection instead of
        # scanning every edge in the graph.
        store.graph.register_adjacency(PROXIMITY_EDGE_KINDS)

    # ----- candidate channels -----

    def semantic_candidates(self, query_vec: np.ndarray) -> list[tuple[str, float]]:
        """Top-k live experiences by cosine, floor applied."""
        def live_experience(entry_id: str, meta: dict) -> bool:
            return meta.get("kind") == NodeKind.EXPERIENCE.value and not meta.get("archived")

        hits = self.store.index.search(
            query_vec, k=self.config.semantic_k, where=live_experience
        )
        return [(nid, score) for nid, score in hits if score >= self.config.semantic_floor]

    def structural_candidates(
        self, signature: StructuralSignature
    ) -> list[tuple[str, float]]:
        """Live experiences whose signature similarity clears tau_sigma."""
        if not signature:
            return []
        out: list[tuple[str, float]] = []
        for node in self.store.experience_nodes():
            sigma = self.store.sim_sigma(signature, self.store.node_signature(node))
            if sigma >= self.config.tau_sigma:
                out.append((node.id, sigma))
        out.sort(key=lambda item: (-item[1], item[0]))
        return out

    def graph_candidates(self, seeds: list[str]) -> dict[str, float]:
        """Experiences within max_hops of any seed; value is the hop-decay
        proximity at the minimum hop count over all seeds.  Seeds themselves
        are never expansion results, so a seed's proximity component is 0."""
        distances = self.store.graph.multi_source_distances(
            seeds, PROXIMITY_EDGE_KINDS, self.config.max_hops
        )
        prox: dict[str, float] = {}
        for node_id, hops in distances.items():
            node = self.store.graph.get_node(node_id)
            if node.kind != NodeKind.EXPERIENCE or node.archived:
                continue
            prox[node_id] = self.config.hop_decay[hops - 1]
        return prox

    # ----- composite retrieval -----

    def retrieve(
        self, description: str, signature: StructuralSignature
    ) -> RetrievalBundle:
        cfg = self.config
        store = self.store

        query_vec = None
        if description.strip():
            query_vec = store.embedder.embed(description)

        semantic_hits: list[tuple[str, float]] = []
        if cfg.enable_semantic and query_vec is not None:
            semantic_hits = self.semantic_candidates(query_vec)
        structural_hits: list[tuple[str, float]] = []
        if cfg.enable_structural:
            structural_hits = self.structural_candidates(signature)

        seed_ids = {nid for nid, _ in semantic_hits}
        seed_ids.update(nid for nid, _ in structural_hits[: cfg.structural_seed_k])
        seeds = sorted(seed_ids)
        prox_map: dict[str, float] = {}
        if cfg.enable_graph and seeds:
            prox_map = self.graph_candidates(seeds)

        candidates = (
            {nid for nid, _ in semantic_hits}
            | {nid for nid, _ in structural_hits}
            | set(prox_map)
        )

        # Superseded records collapse onto their latest version.
        resolved: set[str] = set()
        for nid in candidates:
            latest = store.graph.resolve_latest(nid)
            if not store.graph.get_node(latest).archived:
                resolved.add(latest)

        scored: list[ScoredExperience] = []
        now = store.commit_seq
        for nid in sorted(resolved):
            node = store.graph.get_node(nid)
            sem = 0.0
            if cfg.enable_semantic and query_vec is not None:
                sem = max(0.0, store.semantic_similarity(query_vec, nid))
            sig = 0.0
            if cfg.enable_structural and signature:
                sig = store.sim_sigma(signature, store.node_signature(node))
            prox = prox_map.get(nid, 0.0) if cfg.enable_graph else 0.0
            quality = float(node.payload.get("quality", 0.0))
            age = max(0, (now - 1) - int(node.payload.get("commit_seq", 0)))
            recency = 2.0 ** (-age / cfg.recency_half_life)
            total = (
                cfg.weights[0] * sem
                + cfg.weights[1] * sig
                + cfg.weights[2] * prox
                + cfg.weights[3] * quality
                + cfg.weights[4] * recency
            )
            scored.append(
                ScoredExperience(
                    node_id=nid,
                    status=ExperienceStatus(node.payload.get("status", "failed")),
                    breakdown=ScoreBreakdown(
                        semantic=sem,
                        structural=sig,
                        proximity=prox,
                        quality=quality,
                        recency=recency,
                        weights=cfg.weights,
                        total=total,
                    ),
                    domain=node.domain,
                )
            )

        scored.sort(key=lambda s: (-s.score, s.node_id))
        positives = [s for s in scored if s.status == ExperienceStatus.SUCCESSFUL]
        positives = positives[: cfg.k_positive]
        negatives = [s for s in scored if s.status == ExperienceStatus.FAILED]
        negatives = negatives[: cfg.k_negative]

        for hit in positives:
            hit.entity_bindings = self._entity_bindings(hit.node_id)

        return RetrievalBundle(
            query=description,
            positives=positives,
            negatives=negatives,
            diagnostics={
                "semantic_hits": [nid for nid, _ in semantic_hits],
                "structural_hits": [nid for nid, _ in structural_hits],
                "graph_hits": sorted(prox_map),
                "candidates": len(candidates),
                "after_dedup": len(resolved),
            },
        )

    def _entity_bindings(self, node_id: str) -> dict[str, str]:
        """Map each entity the experience used to its latest version."""
        bindings: dict[str, str] = {}
        for edge in self.store.graph.edges_from(node_id, EdgeKind.USES_ENTITY):
            bindings[edge.dst] = self.store.graph.resolve_latest(edge.dst)
        return bindings
