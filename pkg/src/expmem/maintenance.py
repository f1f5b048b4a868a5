"""Memory maintenance: dominance compaction, consolidation, staleness.

``compact`` runs three idempotent passes over one namespace:

1. *Dominance archival* — live experiences sharing an identical signature
   fingerprint within one domain collapse to the best record (highest
   quality, ties to the lowest id); the rest are superseded and archived.
2. *Consolidation* — groups of three or more live experiences whose
   signatures are pairwise more than 0.95 similar are recognized as a
   recurring procedure: the best member is flagged as a template and its
   procedure reference version is bumped.  A group fingerprint guards
   against re-consolidating an unchanged group.
3. *Staleness* — experiences that use a superseded entity are flagged
   stale (they remain retrievable; the flag warns consumers to rebind).

Nothing is deleted; a second run on an unchanged store reports no actions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .experience import bump_procedure_ref
from .graph import EdgeKind, GraphNode
from .store import MemoryStore

CONSOLIDATION_THRESHOLD = 0.95   # pairwise sigma, strictly above
CONSOLIDATION_MIN_GROUP = 3


@dataclass
class CompactionReport:
    """What one compact() call actually did (new actions only)."""

    archived: list[tuple[str, str]] = field(default_factory=list)      # (winner, loser)
    consolidated: list[dict] = field(default_factory=list)
    stale_flagged: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.archived or self.consolidated or self.stale_flagged)

    def to_text(self) -> str:
        lines = ["compaction report"]
        lines.append(f"  archived: {len(self.archived)}")
        for winner, loser in self.archived:
            lines.append(f"    {winner} supersedes {loser}")
        lines.append(f"  consolidated: {len(self.consolidated)}")
        for entry in self.consolidated:
            members = ", ".join(entry["members"])
            lines.append(
                f"    {entry['representative']} -> {entry['template_ref']} "
                f"[{members}]"
            )
        lines.append(f"  stale flagged: {len(self.stale_flagged)}")
        for node_id in self.stale_flagged:
            lines.append(f"    {node_id}")
        return "\n".join(lines)


def _quality(node: GraphNode) -> float:
    return float(node.payload.get("quality", 0.0))


def _group_fingerprint(member_ids: list[str]) -> str:
    joined = "\x1f".join(sorted(member_ids))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def _dominance_pass(store: MemoryStore, report: CompactionReport) -> None:
    groups: dict[tuple[str, str], list[GraphNode]] = {}
    for node in store.experience_nodes():
        key = (node.payload.get("fingerprint", ""), node.domain)
        groups.setdefault(key, []).append(node)
    for members in groups.values():
        if len(members) < 2:
            continue
        # winner: highest quality, ties to the lowest id
        best_q = max(_quality(n) for n in members)
        winner = min((n for n in members if _quality(n) == best_q), key=lambda n: n.id)
        for loser in members:
            if loser.id == winner.id:
                continue
            if not store.graph.is_superseded(loser.id):
                store.graph.add_edge(winner.id, loser.id, EdgeKind.SUPERSEDES)
            store.archive_node(loser.id)
            report.archived.append((winner.id, loser.id))


def _similarity_components(store: MemoryStore, nodes: list[GraphNode]) -> list[list[GraphNode]]:
    """Union-find over pairs with sigma strictly above the threshold."""
    parent = {n.id: n.id for n in nodes}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: str, b: str) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    sigs = {n.id: store.node_signature(n) for n in nodes}
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if store.sim_sigma(sigs[a.id], sigs[b.id]) > CONSOLIDATION_THRESHOLD:
                union(a.id, b.id)

    components: dict[str, list[GraphNode]] = {}
    for n in nodes:
        components.setdefault(find(n.id), []).append(n)
    return [sorted(c, key=lambda n: n.id) for c in components.values() if len(c) >= 2]


def _pairwise_similar(store: MemoryStore, members: list[GraphNode]) -> bool:
    sigs = [store.node_signature(n) for n in members]
    for i in range(len(sigs)):
        for j in range(i + 1, len(sigs)):
            if store.sim_sigma(sigs[i], sigs[j]) <= CONSOLIDATION_THRESHOLD:
                return False
    return True


def _consolidation_pass(store: MemoryStore, report: CompactionReport) -> None:
    live = store.experience_nodes()
    for component in _similarity_components(store, live):
        if len(component) < CONSOLIDATION_MIN_GROUP:
            continue
        if not _pairwise_similar(store, component):
            continue
        member_ids = [n.id for n in component]
        group_fp = _group_fingerprint(member_ids)
        best_q = max(_quality(n) for n in component)
        rep = min((n for n in component if _quality(n) == best_q), key=lambda n: n.id)
        if rep.payload.get("template_group") == group_fp:
            continue   # unchanged group, already consolidated
        record = store.experience(rep.id)
        current_ref = rep.payload.get("template_ref") or record.procedure.ref_id
        new_ref = bump_procedure_ref(current_ref)
        store.graph.update_payload(
            rep.id, template=True, template_group=group_fp, template_ref=new_ref
        )
        report.consolidated.append(
            {
                "representative": rep.id,
                "template_ref": new_ref,
                "group_fingerprint": group_fp,
                "members": member_ids,
            }
        )


def _staleness_pass(store: MemoryStore, report: CompactionReport) -> None:
    for node in store.experience_nodes():
        if node.stale:
            continue
        for edge in store.graph.edges_from(node.id, EdgeKind.USES_ENTITY):
            if store.graph.is_superseded(edge.dst):
                store.graph.set_stale(node.id)
                report.stale_flagged.append(node.id)
                break


def compact(store: MemoryStore) -> CompactionReport:
    """Run all three maintenance passes; returns only new actions."""
    report = CompactionReport()
    with store.graph.deferred_log():
        _dominance_pass(store, report)
        _consolidation_pass(store, report)
        _staleness_pass(store, report)
    return report
