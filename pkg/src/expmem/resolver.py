"""Entity resolution: map textual mentions onto canonical graph nodes.

Resolution embeds the mention, searches the vector index restricted to the
same node kind and domain scope, and either reuses the best match (score at
or above the match threshold), asks a disambiguator to pick between two
near-tied candidates, or creates a fresh node.  Outcomes are cached per
(mention, kind, domain) in a bounded LRU, and node creations made inside a
``batch()`` block hit the namespace log in a single flush at batch end
(in-memory visibility is immediate; only the disk bytes are deferred).
"""

from __future__ import annotations

import logging
import re
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable

from .embedding import HashEmbedder, VectorIndex
from .graph import GraphNode, GraphStore, NodeKind

logger = logging.getLogger(__name__)

MATCH_THRESHOLD = 0.85   # minimum cosine to reuse an existing node
AMBIGUITY_BAND = 0.02    # top-two gap that triggers disambiguation
CACHE_SIZE = 4096        # LRU entries per namespace

# Operations are domain-agnostic reasoning primitives; they resolve in a
# single global scope while entities stay domain-scoped.
GLOBAL_SCOPE = "*"

_WORD_RE = re.compile(r"[a-z0-9]+")

Disambiguator = Callable[[str, list[tuple[GraphNode, float]]], str]


@dataclass(frozen=True)
class ResolutionOutcome:
    """Result of resolving one mention."""

    mention: str
    kind: NodeKind
    domain: str
    node_id: str | None
    action: str          # matched_existing | created_new | disambiguated | would_create
    score: float | None  # best cosine when a candidate existed
    canonical: str       # canonical name attached to the resolved node


def lexical_overlap_disambiguator(
    mention: str, candidates: list[tuple[GraphNode, float]]
) -> str:
    """Deterministic disambiguation stub.

    Picks the candidate whose title shares the most tokens with the
    mention; ties break toward the lowest node id.  Stands in for an
    LLM-backed chooser in production deployments.
    """
    mention_tokens = set(_WORD_RE.findall(mention.lower()))

    def rank(item: tuple[GraphNode, float]) -> tuple[int, str]:
        node, _ = item
        overlap = len(mention_tokens & set(_WORD_RE.findall(node.title.lower())))
        return (-overlap, node.id)

    return min(candidates, key=rank)[0].id


class EntityResolver:
    """Resolve mentions to Entity/Operation nodes with caching and dedup."""

    def __init__(
        self,
        store: GraphStore,
        embedder: HashEmbedder,
        index: VectorIndex,
        match_threshold: float = MATCH_THRESHOLD,
        ambiguity_band: float = AMBIGUITY_BAND,
        cache_size: int = CACHE_SIZE,
        disambiguator: Disambiguator | None = None,
    ):
        self.store = store
        self.embedder = embedder
        self.index = index
        self.match_threshold = match_threshold
        self.ambiguity_band = ambiguity_band
        self.disambiguator = disambiguator or lexical_overlap_disambiguator
        self._cache: OrderedDict[tuple[str, str, str], ResolutionOutcome] = OrderedDict()
        self._cache_size = cache_size
        self.cache_enabled = True

    # ----- cache plumbing -----

    def _cache_get(self, key: tuple[str, str, str]) -> ResolutionOutcome | None:
        if not self.cache_enabled:
            return None
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
        return hit

    def _cache_put(self, key: tuple[str, str, str], outcome: ResolutionOutcome) -> None:
        if not self.cache_enabled:
            return
        self._cache[key] = outcome
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)

    def clear_cache(self) -> None:
        self._cache.clear()

    @contextmanager
    def batch(self):
        """Group node creations so their log writes flush once at batch end."""
        with self.store.deferred_log():
            yield self

    # ----- the resolution procedure -----

    def _candidates(
        self, vector, kind: NodeKind, domain: str
    ) -> list[tuple[GraphNode, float]]:
        def same_scope(entry_id: str, meta: dict) -> bool:
            if meta.get("kind") != kind.value or meta.get("domain") != domain:
                return False
            return not self.store.get_node(entry_id).archived

        hits = self.index.search(vector, k=2, where=same_scope)
        return [(self.store.get_node(nid), score) for nid, score in hits]

    def resolve(
        self,
        mention: str,
        kind: NodeKind,
        domain: str,
        canonical: str | None = None,
        description: str = "",
        payload_extra: dict | None = None,
    ) -> ResolutionOutcome:
        """Resolve a mention, creating a node when nothing matches.

        Args:
            mention: surface text to resolve (also the text embedded).
            kind: node kind to resolve against (Entity or Operation).
            domain: scope for the search; pass GLOBAL_SCOPE for operations.
            canonical: canonical name to attach if a node is created
                (defaults to the mention itself).
            description: node description on creation.
            payload_extra: extra payload fields on creation.

        Returns:
            ResolutionOutcome with the node id and how it was obtained.
        """
        key = (mention, kind.value, domain)
        cached = self._cache_get(key)
        if cached is not None:
            return cached
        outcome = self._resolve_uncached(
            mention, kind, domain, canonical, description, payload_extra, write=True
        )
        self._cache_put(key, outcome)
        return outcome

    def peek(self, mention: str, kind: NodeKind, domain: str) -> ResolutionOutcome:
        """Dry resolution against the current snapshot — never writes.

        A mention that would create a node comes back with node_id=None and
        action "would_create".
        """
        cached = self._cache_get((mention, kind.value, domain))
        if cached is not None:
            return cached
        return self._resolve_uncached(
            mention, kind, domain, None, "", None, write=False
        )

    def _resolve_uncached(
        self,
        mention: str,
        kind: NodeKind,
        domain: str,
        canonical: str | None,
        description: str,
        payload_extra: dict | None,
        write: bool,
    ) -> ResolutionOutcome:
        vector = self.embedder.embed(mention)
        candidates = self._candidates(vector, kind, domain)
        if candidates:
            best_node, best_score = candidates[0]
            if best_score >= self.match_threshold:
                ambiguous = (
                    len(candidates) > 1
                    and candidates[1][1] >= self.match_threshold
                    and (best_score - candidates[1][1]) <= self.ambiguity_band
                )
                if ambiguous:
                    try:
                        chosen_id = self.disambiguator(mention, candidates)
                        chosen = self.store.get_node(
                            self.store.resolve_latest(chosen_id)
                        )
                        return ResolutionOutcome(
                            mention, kind, domain, chosen.id, "disambiguated",
                            best_score, chosen.payload.get("canonical", chosen.title),
                        )
                    except Exception as exc:  # disambiguator is third-party code
                        logger.warning(
                            "disambiguator failed for %r (%s); creating new node",
                            mention, exc,
                        )
                else:
                    latest = self.store.get_node(
                        self.store.resolve_latest(best_node.id)
                    )
                    return ResolutionOutcome(
                        mention, kind, domain, latest.id, "matched_existing",
                        best_score, latest.payload.get("canonical", latest.title),
                    )
        best_score = candidates[0][1] if candidates else None
        name = canonical or mention
        if not write:
            return ResolutionOutcome(
                mention, kind, domain, None, "would_create", best_score, name
            )
        payload = {
            "canonical": name,
            "embed_text": mention,
            "embedding": [float(x) for x in vector],
        }
        if payload_extra:
            payload.update(payload_extra)
        node = GraphNode(
            kind=kind,
            title=name,
            description=description or f"{kind.value} resolved from mention {mention!r}",
            domain=domain,
            payload=payload,
        )
        node_id = self.store.add_node(node)
        self.index.insert(node_id, vector, {"kind": kind.value, "domain": domain})
        return ResolutionOutcome(
            mention, kind, domain, node_id, "created_new", best_score, name
        )
