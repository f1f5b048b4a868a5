"""Ingest gate: validation, graph linking, dominance, feedback parsing."""

from __future__ import annotations

import pytest

from conftest import make_record
from expmem import (
    EdgeKind,
    ErrorClass,
    IngestConfig,
    IngestGate,
    MemoryStore,
    NodeKind,
    PatchKind,
    decompose_feedback,
)
from expmem.errors import InvariantError
from expmem.experience import (
    Evaluation,
    ExperienceRecord,
    RecoveryOutcome,
    RecoveryProcedure,
)


@pytest.fixture
def store(tmp_path):
    s = MemoryStore(tmp_path, "ing")
    yield s
    s.close()


@pytest.fixture
def gate_(store):
    return IngestGate(store)


class TestFeedbackGrammar:
    def test_full_error_block(self):
        errors, patches = decompose_feedback(
            "some prose first\n"
            "ERROR: tool_failure @step 2 iter 3\n"
            "CAUSE: timeout against the upstream service (0.7)\n"
            "RECOVERY: retry_with_patch -> recovered\n"
        )
        assert len(errors) == 1 and not patches
        err = errors[0]
        assert err.error_class is ErrorClass.TOOL_FAILURE
        assert (err.step, err.iteration) == (2, 3)
        assert err.hypothesis == "timeout against the upstream service"
        assert err.confidence == pytest.approx(0.7)
        assert err.recovery_procedure is RecoveryProcedure.RETRY_WITH_PATCH
        assert err.recovery_outcome is RecoveryOutcome.RECOVERED

    def test_iteration_defaults_to_zero(self):
        errors, _ = decompose_feedback("ERROR: schema_mismatch @step 1")
        assert errors[0].iteration == 0

    def test_patch_line(self):
        _, patches = decompose_feedback(
            "PATCH: replace_logic @step2: add a schema_mismatch guard before parsing",
            trigger_signature=("op:parsing",),
        )
        assert len(patches) == 1
        p = patches[0]
        assert p.kind is PatchKind.REPLACE_LOGIC
        assert p.location == "step2"
        assert p.new_logic.startswith("add a schema_mismatch guard")
        assert p.trigger_signature == ("op:parsing",)

    def test_unknown_error_class_skipped_with_its_attachments(self):
        errors, _ = decompose_feedback(
            "ERROR: made_up_class @step 1\n"
            "CAUSE: should not attach anywhere (0.9)\n"
            "ERROR: tool_failure @step 2\n"
        )
        assert len(errors) == 1
        assert errors[0].error_class is ErrorClass.TOOL_FAILURE
        assert errors[0].hypothesis == ""

    def test_unknown_patch_kind_skipped(self):
        _, patches = decompose_feedback("PATCH: rewrite_everything @all: nope")
        assert patches == ()

    def test_free_text_is_ignored(self):
        errors, patches = decompose_feedback(
            "the judge thinks this went poorly\nbut offers no structure\n"
        )
        assert errors == () and patches == ()

    def test_confidence_clamped_to_one(self):
        errors, _ = decompose_feedback(
            "ERROR: tool_failure @step 1\nCAUSE: big overshoot (1.7)\n"
        )
        assert errors[0].confidence == 1.0


class TestCommit:
    def test_commit_assigns_id_and_sequence(self, store, gate_):
        a = gate_.commit(make_record())
        b = gate_.commit(make_record(description="parse manifest entries",
                                     ops=("parsing",)))
        assert a == "exp:000001" and b == "exp:000002"
        assert store.experience(a).commit_seq == 0
        assert store.experience(b).commit_seq == 1

    def test_invalid_record_rejected_before_any_write(self, store, gate_):
        record = make_record()
        object.__setattr__(record.evaluation, "overall", 0.123)  # corrupt quality
        before = store.graph.node_count()
        with pytest.raises(InvariantError):
            gate_.commit(record)
        assert store.graph.node_count() == before

    def test_operations_materialized_with_followed_by_chain(self, store, gate_):
        gate_.commit(make_record(ops=("ranking", "lookup", "comparison")))
        ops = {n.title: n.id for n in store.graph.nodes(NodeKind.OPERATION)}
        assert set(ops) == {"ranking", "lookup", "comparison"}
        assert store.graph.has_edge(ops["ranking"], ops["lookup"], EdgeKind.FOLLOWED_BY)
        assert store.graph.has_edge(ops["lookup"], ops["comparison"], EdgeKind.FOLLOWED_BY)

    def test_semantic_edge_above_cos_threshold(self, store, gate_):
        a = gate_.commit(make_record(description="rank the quarterly survey results"))
        b = gate_.commit(make_record(description="rank the quarterly survey results"))
        assert store.graph.has_edge(b, a, EdgeKind.SIMILAR_TO)
        edge = store.graph.edges_from(b, EdgeKind.SIMILAR_TO)[0]
        assert edge.weight > 0.85

    def test_no_semantic_edge_for_distant_wording(self, store, gate_):
        a = gate_.commit(make_record(description="rank the quarterly survey results"))
        b = gate_.commit(make_record(description="parse manifest shipping entries",
                                     ops=("parsing",)))
        assert not store.graph.has_edge(b, a, EdgeKind.SIMILAR_TO)

    def test_structural_edge_at_or_above_sigma_threshold(self, store, gate_):
        a = gate_.commit(make_record(description="rank the quarterly survey results",
                                     ops=("ranking", "lookup", "comparison")))
        b = gate_.commit(make_record(description="completely different wording",
                                     ops=("ranking", "lookup", "retry")))
        # sigma = LCS/min = 2/3 >= 0.6
        assert store.graph.has_edge(b, a, EdgeKind.STRUCTURALLY_SIMILAR_TO)

    def test_dominance_supersedes_lower_quality_same_domain(self, store, gate_):
        low = gate_.commit(make_record(efficiency=0.0))
        high = gate_.commit(make_record(efficiency=1.0))
        assert store.graph.has_edge(high, low, EdgeKind.SUPERSEDES)
        assert store.graph.get_node(low).archived
        assert store.graph.resolve_latest(low) == high

    def test_no_dominance_across_domains(self, store, gate_):
        low = gate_.commit(make_record(efficiency=0.0, domain="alpha"))
        high = gate_.commit(make_record(efficiency=1.0, domain="beta"))
        assert not store.graph.has_edge(high, low, EdgeKind.SUPERSEDES)
        assert not store.graph.get_node(low).archived

    def test_equal_quality_never_dominates(self, store, gate_):
        a = gate_.commit(make_record())
        b = gate_.commit(make_record())
        assert not store.graph.has_edge(b, a, EdgeKind.SUPERSEDES)
        assert not store.graph.get_node(a).archived

    def test_linking_respects_the_window(self, store, tmp_path):
        gate_ = IngestGate(store, IngestConfig(similarity_window=1))
        a = gate_.commit(make_record())
        b = gate_.commit(make_record(description="parse manifest entries",
                                     ops=("parsing",)))
        c = gate_.commit(make_record())  # a is now outside the window of 1
        assert not store.graph.has_edge(c, a, EdgeKind.SIMILAR_TO)

    def test_unknown_entity_reference_degrades_gracefully(self, store, gate_):
        record = make_record()
        object.__setattr__(record.goal, "entity_ids", ("ent:999999",))
        nid = gate_.commit(record)  # warns, still commits
        assert store.graph.has_node(nid)
        assert store.graph.edges_from(nid, EdgeKind.USES_ENTITY) == []

    def test_commit_is_one_log_transaction(self, store, gate_):
        log = store.dir / "log.ndjson"
        size_before = log.stat().st_size if log.exists() else 0
        gate_.commit(make_record())
        assert log.stat().st_size > size_before
