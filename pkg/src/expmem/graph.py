"""Typed property graph with versioning and append-only persistence.

Node ids are namespace-scoped monotonic integers rendered as prefixed
strings ("exp:000042"), which keeps replay deterministic and sort keys
stable.  Nothing is ever deleted: versioning adds a supersedes edge from
the new node to the old one, and retirement is an ``archived`` flag.

Persistence is one newline-delimited record log per namespace.  Every
line is a self-describing JSON object; the first line is a schema-versioned
header.  Updates re-append the full node line (last writer wins on replay),
so the log stays strictly append-only.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    AlreadySupersededError,
    CycleError,
    DuplicateIdError,
    MalformedPayloadError,
    MissingEndpointError,
    NotAnEntityError,
    SchemaVersionError,
    ThresholdError,
    TypeConstraintError,
    UnknownNodeError,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class NodeKind(str, Enum):
    """The five node types of the procedural graph."""

    ENTITY = "entity"
    EXPERIENCE = "experience"
    SUBTASK = "subtask"
    OPERATION = "operation"
    TASK_TOPIC = "task_topic"


class EdgeKind(str, Enum):
    """The ten edge types of the procedural graph."""

    FOLLOWED_BY = "followed_by"
    RELATES_TO = "relates_to"
    USES = "uses"
    EQUIVALENT_TO = "equivalent_to"
    MEMBER_OF = "member_of"
    USES_ENTITY = "uses_entity"
    SIMILAR_TO = "similar_to"
    STRUCTURALLY_SIMILAR_TO = "structurally_similar_to"
    DERIVED_FROM = "derived_from"
    SUPERSEDES = "supersedes"


ID_PREFIX = {
    NodeKind.ENTITY: "ent",
    NodeKind.EXPERIENCE: "exp",
    NodeKind.SUBTASK: "sub",
    NodeKind.OPERATION: "op",
    NodeKind.TASK_TOPIC: "top",
}

# Edge kinds that carry a similarity weight, with their minimum accepted
# weight and whether the bound itself is accepted (inclusive).
WEIGHTED_KINDS: dict[EdgeKind, tuple[float, bool]] = {
    EdgeKind.SIMILAR_TO: (0.85, False),            # strictly greater
    EdgeKind.STRUCTURALLY_SIMILAR_TO: (0.6, True),  # greater-or-equal
}


@dataclass
class GraphNode:
    """A node in the procedural graph.

    ``id`` and ``created_at`` are assigned by the store on insert unless an
    explicit id is supplied (import/replay path).
    """

    kind: NodeKind
    title: str
    description: str
    domain: str = ""
    payload: dict = field(default_factory=dict)
    id: str | None = None
    version: int = 1
    created_at: int = -1
    archived: bool = False
    stale: bool = False

    def to_line(self) -> dict:
        return {
            "record": "node",
            "id": self.id,
            "kind": self.kind.value,
            "title": self.title,
            "description": self.description,
            "domain": self.domain,
            "payload": self.payload,
            "version": self.version,
            "created_at": self.created_at,
            "archived": self.archived,
            "stale": self.stale,
        }

    @classmethod
    def from_line(cls, obj: dict) -> "GraphNode":
        return cls(
            kind=NodeKind(obj["kind"]),
            title=obj["title"],
            description=obj["description"],
            domain=obj.get("domain", ""),
            payload=obj.get("payload", {}),
            id=obj["id"],
            version=obj.get("version", 1),
            created_at=obj.get("created_at", -1),
            archived=obj.get("archived", False),
            stale=obj.get("stale", False),
        )


@dataclass
class GraphEdge:
    """A directed, typed edge.  ``weight`` is present only on similarity kinds."""

    id: str
    src: str
    dst: str
    kind: EdgeKind
    weight: float | None = None
    created_at: int = -1

    def to_line(self) -> dict:
        return {
            "record": "edge",
            "id": self.id,
            "src": self.src,
            "dst": self.dst,
            "kind": self.kind.value,
            "weight": self.weight,
            "created_at": self.created_at,
        }

    @classmethod
    def from_line(cls, obj: dict) -> "GraphEdge":
        return cls(
            id=obj["id"],
            src=obj["src"],
            dst=obj["dst"],
            kind=EdgeKind(obj["kind"]),
            weight=obj.get("weight"),
            created_at=obj.get("created_at", -1),
        )


def canonical_line(obj: dict) -> str:
    """Serialize one log record to its canonical single-line form."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class GraphStore:
    """Namespace-scoped typed graph with an optional backing log file.

    All mutations are serialized through an internal lock; reads take the
    same lock, so any read observes a consistent store state.
    """

    def __init__(self, log_path: Path | None = None):
        self._lock = threading.RLock()
        self._nodes: dict[str, GraphNode] = {}
        self._edges: dict[str, GraphEdge] = {}
        self._out: dict[str, list[str]] = {}   # node id -> edge ids (as src)
        self._in: dict[str, list[str]] = {}    # node id -> edge ids (as dst)
        self._seq = 0                          # shared created_at counter
        self._kind_counters: dict[NodeKind, int] = {k: 0 for k in NodeKind}
        self._edge_counter = 0
        # Registered undirected adjacency projections, maintained
        # incrementally so hot traversals never filter per edge.
        self._adjacency: dict[frozenset, dict[str, list[str]]] = {}
        # Supersedes chains are walked on every candidate resolution, so the
        # old -> new mapping is kept directly instead of filtering _in lists.
        self._superseded_by: dict[str, str] = {}
        # Bumped whenever node membership or an archive flag changes; lets
        # callers cache derived node listings and detect staleness cheaply.
        self._change_id = 0
        self._log_path = log_path
        self._log_fp = None
        self._log_buffer: list[dict] | None = None
        if log_path is not None:
            log_path.parent.mkdir(parents=True, exist_ok=True)
            if log_path.exists():
                self._replay(log_path)
                self._log_fp = open(log_path, "a", encoding="utf-8")
            else:
                self._log_fp = open(log_path, "a", encoding="utf-8")
                self._append({"record": "header", "schema": SCHEMA_VERSION})

    # ----- persistence -----

    def _append(self, obj: dict) -> None:
        if self._log_fp is None:
            return
        if self._log_buffer is not None:
            self._log_buffer.append(obj)
            return
        self._log_fp.write(canonical_line(obj) + "\n")
        self._log_fp.flush()

    @contextmanager
    def deferred_log(self):
        """Buffer log appends until the block exits (batched writes).

        In-memory state stays immediately visible; only the bytes on disk
        are deferred, and they land in one flush at the end of the block.
        """
        with self._lock:
            if self._log_buffer is not None:
                # already inside a batch; nest transparently
                yield
                return
            self._log_buffer = []
        try:
            yield
        finally:
            with self._lock:
                buffered, self._log_buffer = self._log_buffer, None
                if self._log_fp is not None and buffered:
                    for obj in buffered:
                        self._log_fp.write(canonical_line(obj) + "\n")
                    self._log_fp.flush()

    def _replay(self, path: Path) -> None:
        with open(path, encoding="utf-8") as fp:
            header_line = fp.readline()
            if not header_line:
                raise SchemaVersionError(f"{path}: empty log, missing header")
            header = json.loads(header_line)
            if header.get("record") != "header" or header.get("schema") != SCHEMA_VERSION:
                raise SchemaVersionError(f"{path}: unsupported header {header!r}")
            for raw in fp:
                raw = raw.strip()
                if not raw:
                    continue
                obj = json.loads(raw)
                if obj["record"] == "node":
                    node = GraphNode.from_line(obj)
                    self._install_node(node, replace=True)
                elif obj["record"] == "edge":
                    edge = GraphEdge.from_line(obj)
                    if edge.id not in self._edges:
                        self._install_edge(edge)
                else:
                    logger.warning("skipping unknown log record %r", obj.get("record"))
        self._restore_counters()

    def _restore_counters(self) -> None:
        self._seq = 0
        for node in self._nodes.values():
            self._seq = max(self._seq, node.created_at)
            num = int(node.id.split(":", 1)[1])
            if num > self._kind_counters[node.kind]:
                self._kind_counters[node.kind] = num
        for edge in self._edges.values():
            self._seq = max(self._seq, edge.created_at)
            num = int(edge.id.split(":", 1)[1])
            self._edge_counter = max(self._edge_counter, num)

    def export(self, path: Path) -> None:
        """Write a canonical snapshot: header, then records by created_at.

        The snapshot is the interchange format: importing it into a fresh
        namespace and exporting again reproduces the bytes exactly.
        """
        with self._lock:
            records: list[tuple[int, dict]] = []
            for node in self._nodes.values():
                records.append((node.created_at, node.to_line()))
            for edge in self._edges.values():
                records.append((edge.created_at, edge.to_line()))
            records.sort(key=lambda item: item[0])
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as fp:
                fp.write(canonical_line({"record": "header", "schema": SCHEMA_VERSION}) + "\n")
                for _, obj in records:
                    fp.write(canonical_line(obj) + "\n")

    def import_log(self, path: Path) -> int:
        """Load an exported log into this (empty) store.

        Returns the number of records imported.  The store must be empty —
        imports never merge.
        """
        with self._lock:
            if self._nodes or self._edges:
                raise DuplicateIdError("import requires an empty namespace")
            self._replay(Path(path))
            if self._log_fp is not None:
                for node in sorted(self._nodes.values(), key=lambda n: n.created_at):
                    self._append(node.to_line())
                for edge in sorted(self._edges.values(), key=lambda e: e.created_at):
                    self._append(edge.to_line())
            return len(self._nodes) + len(self._edges)

    def close(self) -> None:
        if self._log_fp is not None:
            self._log_fp.close()
            self._log_fp = None

    # ----- node operations -----

    def _install_node(self, node: GraphNode, replace: bool = False) -> None:
        if not replace and node.id in self._nodes:
            raise DuplicateIdError(node.id)
        self._change_id += 1
        self._nodes[node.id] = node
        self._out.setdefault(node.id, [])
        self._in.setdefault(node.id, [])

    def _install_edge(self, edge: GraphEdge) -> None:
        self._edges[edge.id] = edge
        self._out.setdefault(edge.src, []).append(edge.id)
        self._in.setdefault(edge.dst, []).append(edge.id)
        if edge.kind == EdgeKind.SUPERSEDES:
            self._superseded_by[edge.dst] = edge.src
        for kinds, adjacency in self._adjacency.items():
            if edge.kind in kinds:
                adjacency.setdefault(edge.src, []).append(edge.dst)
                adjacency.setdefault(edge.dst, []).append(edge.src)

    def add_node(self, node: GraphNode) -> str:
        """Insert a node, assigning id/created_at unless already set.

        Raises:
            MalformedPayloadError: empty title/description or version < 1.
            DuplicateIdError: explicit id already present.
        """
        if not node.title or not node.title.strip():
            raise MalformedPayloadError("node title must be non-empty")
        if not node.description or not node.description.strip():
            raise MalformedPayloadError("node description must be non-empty")
        if node.version < 1:
            raise MalformedPayloadError(f"version must be >= 1, got {node.version}")
        with self._lock:
            if node.id is None:
                self._kind_counters[node.kind] += 1
                node.id = f"{ID_PREFIX[node.kind]}:{self._kind_counters[node.kind]:06d}"
            elif node.id in self._nodes:
                raise DuplicateIdError(node.id)
            else:
                prefix, _, num = node.id.partition(":")
                if prefix == ID_PREFIX[node.kind] and num.isdigit():
                    self._kind_counters[node.kind] = max(
                        self._kind_counters[node.kind], int(num)
                    )
            self._seq += 1
            node.created_at = self._seq
            self._install_node(node)
            self._append(node.to_line())
            return node.id

    def get_node(self, node_id: str) -> GraphNode:
        with self._lock:
            try:
                return self._nodes[node_id]
            except KeyError:
                raise UnknownNodeError(node_id) from None

    def has_node(self, node_id: str) -> bool:
        with self._lock:
            return node_id in self._nodes

    def nodes(self, kind: NodeKind | None = None) -> Iterator[GraphNode]:
        """Iterate nodes (ascending id), optionally filtered by kind."""
        with self._lock:
            ids = sorted(self._nodes)
        for node_id in ids:
            node = self._nodes.get(node_id)
            if node is not None and (kind is None or node.kind == kind):
                yield node

    def node_count(self) -> int:
        with self._lock:
            return len(self._nodes)

    def change_id(self) -> int:
        """Monotone counter over membership/archive changes (cache key)."""
        with self._lock:
            return self._change_id

    def edge_count(self) -> int:
        with self._lock:
            return len(self._edges)

    def _update_node(self, node: GraphNode) -> None:
        """Re-append the node line after a flag/payload change."""
        self._append(node.to_line())

    def set_archived(self, node_id: str, flag: bool = True) -> None:
        with self._lock:
            node = self.get_node(node_id)
            if node.archived != flag:
                node.archived = flag
                self._change_id += 1
                self._update_node(node)

    def set_stale(self, node_id: str, flag: bool = True) -> None:
        with self._lock:
            node = self.get_node(node_id)
            if node.stale != flag:
                node.stale = flag
                self._update_node(node)

    def update_payload(self, node_id: str, **fields) -> None:
        """Merge fields into a node payload and persist the change."""
        with self._lock:
            node = self.get_node(node_id)
            node.payload.update(fields)
            self._update_node(node)

    # ----- edge operations -----

    def add_edge(
        self,
        src: str,
        dst: str,
        kind: EdgeKind,
        weight: float | None = None,
    ) -> str:
        """Insert a directed edge with kind-specific checks.

        Raises:
            MissingEndpointError: either endpoint is unknown.
            TypeConstraintError: endpoint kinds violate the edge kind.
            ThresholdError: weight missing/out of range for similarity kinds,
                or supplied for a kind that takes none.
        """
        with self._lock:
            if src not in self._nodes:
                raise MissingEndpointError(f"unknown source {src}")
            if dst not in self._nodes:
                raise MissingEndpointError(f"unknown target {dst}")
            self._check_types(src, dst, kind)
            if kind in WEIGHTED_KINDS:
                bound, inclusive = WEIGHTED_KINDS[kind]
                if weight is None:
                    raise ThresholdError(f"{kind.value} requires a weight")
                if not (0.0 <= weight <= 1.0):
                    raise ThresholdError(f"weight {weight} outside [0, 1]")
                ok = weight >= bound if inclusive else weight > bound
                if not ok:
                    op = ">=" if inclusive else ">"
                    raise ThresholdError(
                        f"{kind.value} requires weight {op} {bound}, got {weight}"
                    )
            elif weight is not None:
                raise ThresholdError(f"{kind.value} edges carry no weight")
            if kind == EdgeKind.SUPERSEDES and dst in self._superseded_by:
                raise AlreadySupersededError(dst)
            self._edge_counter += 1
            self._seq += 1
            edge = GraphEdge(
                id=f"edge:{self._edge_counter:06d}",
                src=src,
                dst=dst,
                kind=kind,
                weight=weight,
                created_at=self._seq,
            )
            self._install_edge(edge)
            self._append(edge.to_line())
            return edge.id

    def _check_types(self, src: str, dst: str, kind: EdgeKind) -> None:
        skind = self._nodes[src].kind
        dkind = self._nodes[dst].kind
        if kind == EdgeKind.FOLLOWED_BY:
            if skind != NodeKind.OPERATION or dkind != NodeKind.OPERATION:
                raise TypeConstraintError("followed_by links Operation -> Operation")
        elif kind == EdgeKind.USES_ENTITY:
            if skind != NodeKind.EXPERIENCE or dkind != NodeKind.ENTITY:
                raise TypeConstraintError("uses_entity links Experience -> Entity")
        elif kind == EdgeKind.MEMBER_OF:
            if dkind != NodeKind.TASK_TOPIC:
                raise TypeConstraintError("member_of targets a TaskTopic")

    def get_edge(self, edge_id: str) -> GraphEdge:
        with self._lock:
            try:
                return self._edges[edge_id]
            except KeyError:
                raise UnknownNodeError(edge_id) from None

    def _incoming(self, node_id: str, kind: EdgeKind | None = None) -> list[GraphEdge]:
        return [
            self._edges[eid]
            for eid in self._in.get(node_id, [])
            if kind is None or self._edges[eid].kind == kind
        ]

    def _outgoing(self, node_id: str, kind: EdgeKind | None = None) -> list[GraphEdge]:
        return [
            self._edges[eid]
            for eid in self._out.get(node_id, [])
            if kind is None or self._edges[eid].kind == kind
        ]

    def edges_from(self, node_id: str, kind: EdgeKind | None = None) -> list[GraphEdge]:
        with self._lock:
            return list(self._outgoing(node_id, kind))

    def edges_to(self, node_id: str, kind: EdgeKind | None = None) -> list[GraphEdge]:
        with self._lock:
            return list(self._incoming(node_id, kind))

    def has_edge(self, src: str, dst: str, kind: EdgeKind) -> bool:
        with self._lock:
            return any(
                e.dst == dst for e in self._outgoing(src, kind)
            )

    def edges(self) -> Iterator[GraphEdge]:
        with self._lock:
            ids = sorted(self._edges)
        for edge_id in ids:
            edge = self._edges.get(edge_id)
            if edge is not None:
                yield edge

    # ----- versioning -----

    def version_entity(self, old_id: str, replacement: GraphNode) -> str:
        """Version an Entity node: insert the replacement and link it.

        The replacement gets version old+1 and a supersedes edge new -> old.
        The old node keeps its id, flags, and edges — previous versions stay
        retrievable forever.

        Raises:
            NotAnEntityError: old node is not an Entity.
            AlreadySupersededError: old node already has a successor.
        """
        with self._lock:
            old = self.get_node(old_id)
            if old.kind != NodeKind.ENTITY:
                raise NotAnEntityError(f"{old_id} is {old.kind.value}, not entity")
            if old_id in self._superseded_by:
                raise AlreadySupersededError(old_id)
            if replacement.kind != NodeKind.ENTITY:
                raise NotAnEntityError("replacement must be an Entity node")
            replacement.version = old.version + 1
            new_id = self.add_node(replacement)
            self.add_edge(new_id, old_id, EdgeKind.SUPERSEDES)
            return new_id

    def resolve_latest(self, node_id: str) -> str:
        """Follow the supersedes chain from ``node_id`` to its terminal node.

        Idempotent: resolving an already-latest node returns it unchanged.

        Raises:
            CycleError: the chain revisits a node (corrupted store).
        """
        with self._lock:
            current = self.get_node(node_id).id
            seen = {current}
            while True:
                # AlreadySupersededError guarantees at most one successor.
                successor = self._superseded_by.get(current)
                if successor is None:
                    return current
                current = successor
                if current in seen:
                    raise CycleError(f"supersedes cycle at {current}")
                seen.add(current)

    def is_superseded(self, node_id: str) -> bool:
        with self._lock:
            return node_id in self._superseded_by

    # ----- traversal -----

    def traverse(
        self,
        seeds: Iterable[str],
        kinds: Iterable[EdgeKind],
        max_hops: int,
    ) -> set[str]:
        """Breadth-first reachability over the given edge kinds.

        Edges are walked in both directions.  Returns the set of node ids
        reachable within ``max_hops`` hops, excluding the seeds themselves;
        ``max_hops=0`` therefore returns the empty set.
        """
        kinds = set(kinds)
        with self._lock:
            frontier = deque()
            dist: dict[str, int] = {}
            for seed in seeds:
                seed_id = self.get_node(seed).id
                dist[seed_id] = 0
                frontier.append(seed_id)
            reached: set[str] = set()
            while frontier:
                current = frontier.popleft()
                d = dist[current]
                if d >= max_hops:
                    continue
                for edge in self._outgoing(current):
                    if edge.kind in kinds and edge.dst not in dist:
                        dist[edge.dst] = d + 1
                        reached.add(edge.dst)
                        frontier.append(edge.dst)
                for edge in self._incoming(current):
                    if edge.kind in kinds and edge.src not in dist:
                        dist[edge.src] = d + 1
                        reached.add(edge.src)
                        frontier.append(edge.src)
            return reached

    def hop_distances(
        self,
        seed: str,
        kinds: Iterable[EdgeKind],
        max_hops: int,
    ) -> dict[str, int]:
        """BFS distances (1..max_hops) from one seed, excluding the seed."""
        kinds = set(kinds)
        with self._lock:
            seed_id = self.get_node(seed).id
            dist = {seed_id: 0}
            frontier = deque([seed_id])
            while frontier:
                current = frontier.popleft()
                d = dist[current]
                if d >= max_hops:
                    continue
                for edge in self._outgoing(current):
                    if edge.kind in kinds and edge.dst not in dist:
                        dist[edge.dst] = d + 1
                        frontier.append(edge.dst)
                for edge in self._incoming(current):
                    if edge.kind in kinds and edge.src not in dist:
                        dist[edge.src] = d + 1
                        frontier.append(edge.src)
            dist.pop(seed_id, None)
            return dist

    def register_adjacency(self, kinds: Iterable[EdgeKind]) -> frozenset:
        """Maintain an undirected neighbour map for this edge-kind set.

        Registration pays one full edge scan; from then on every new edge
        of a covered kind is mirrored into the map, so repeated traversals
        over the same kinds cost O(visited degree) with no per-edge
        filtering.  Returns the projection key (idempotent)."""
        key = frozenset(kinds)
        with self._lock:
            if key not in self._adjacency:
                adjacency: dict[str, list[str]] = {}
                for edge in self._edges.values():
                    if edge.kind in key:
                        adjacency.setdefault(edge.src, []).append(edge.dst)
                        adjacency.setdefault(edge.dst, []).append(edge.src)
                self._adjacency[key] = adjacency
            return key

    def multi_source_distances(
        self,
        seeds: Iterable[str],
        kinds: Iterable[EdgeKind],
        max_hops: int,
    ) -> dict[str, int]:
        """Minimum hop distance from any seed, all seeds excluded.

        This is ``traverse`` with distances attached: breadth-first over the
        given kinds in both directions from the whole seed set at once, so a
        node's distance is its distance to the nearest seed.  Uses a
        registered adjacency projection when one covers ``kinds``.
        """
        key = frozenset(kinds)
        with self._lock:
            adjacency = self._adjacency.get(key)
            seed_ids = [self.get_node(s).id for s in seeds]
            dist = {sid: 0 for sid in seed_ids}
            frontier = deque(dist)
            if adjacency is not None:
                while frontier:
                    current = frontier.popleft()
                    d = dist[current]
                    if d >= max_hops:
                        continue
                    for neighbour in adjacency.get(current, ()):
                        if neighbour not in dist:
                            dist[neighbour] = d + 1
                            frontier.append(neighbour)
            else:
                while frontier:
                    current = frontier.popleft()
                    d = dist[current]
                    if d >= max_hops:
                        continue
                    for edge in self._outgoing(current):
                        if edge.kind in key and edge.dst not in dist:
                            dist[edge.dst] = d + 1
                            frontier.append(edge.dst)
                    for edge in self._incoming(current):
                        if edge.kind in key and edge.src not in dist:
                            dist[edge.src] = d + 1
                            frontier.append(edge.src)
            for sid in seed_ids:
                dist.pop(sid, None)
            return dist
