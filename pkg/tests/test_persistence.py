"""Store persistence: reopening, export/import, and document seeding."""

import json

import pytest

from conftest import make_record
from expmem import (
    ExperienceRecord,
    IngestGate,
    MemoryStore,
    NodeKind,
    Retriever,
    StructuralSignature,
)
from expmem.harness import SimulatedWorld, make_universe
from expmem.workflow import WorkflowEngine, preset


QUERY = "rank the quarterly survey results"
QUERY_SIG = StructuralSignature(ops=("op:ranking", "op:lookup", "op:comparison"))


def populated_store(root, sub="orig", n_tasks=15, seed=4):
    """A store filled by a real engine run (experiences, entities, edges)."""
    store = MemoryStore(root / sub, "ns")
    tasks = make_universe(n_tasks, prefix="persist")
    world = SimulatedWorld(tasks, seed=seed)
    engine = WorkflowEngine(
        store,
        preset("EG2", commit_mode="epoch_boundary"),
        world.hooks(),
        world.adapter(),
    )
    engine.run_epochs(world.specs(tasks), 2)
    return store


def hits_of(store):
    bundle = Retriever(store).retrieve(QUERY, QUERY_SIG)
    return [
        (hit.node_id, hit.score, hit.status.value)
        for hit in (*bundle.positives, *bundle.negatives)
    ]


class TestReopen:
    def test_reopen_restores_retrieval_exactly(self, tmp_path):
        store = populated_store(tmp_path)
        before = hits_of(store)
        seq = store.commit_seq
        assert before, "the run should have produced retrievable experiences"
        store.close()

        reopened = MemoryStore(tmp_path / "orig", "ns")
        assert reopened.commit_seq == seq
        assert hits_of(reopened) == before
        reopened.close()

    def test_counters_resume_after_reopen(self, tmp_path):
        store = populated_store(tmp_path)
        n_before = len(list(store.graph.nodes(NodeKind.EXPERIENCE)))
        store.close()

        reopened = MemoryStore(tmp_path / "orig", "ns")
        node_id = IngestGate(reopened).commit(make_record())
        assert int(node_id.split(":")[1]) == n_before + 1
        assert len(list(reopened.graph.nodes(NodeKind.EXPERIENCE))) == n_before + 1
        reopened.close()


class TestExportImport:
    def test_export_import_export_is_byte_identical(self, tmp_path):
        store = populated_store(tmp_path)
        first = tmp_path / "first.ndjson"
        store.export(first)
        store.close()

        copy = MemoryStore(tmp_path / "copy", "ns")
        n = copy.import_log(first)
        # every line except the schema header is a replayed record
        assert n == len(first.read_bytes().splitlines()) - 1
        second = tmp_path / "second.ndjson"
        copy.export(second)
        copy.close()
        assert first.read_bytes() == second.read_bytes()

    def test_imported_store_retrieves_identically(self, tmp_path):
        store = populated_store(tmp_path)
        dump = tmp_path / "dump.ndjson"
        store.export(dump)
        expected = hits_of(store)
        store.close()

        copy = MemoryStore(tmp_path / "copy", "other-ns")
        copy.import_log(dump)
        assert hits_of(copy) == expected
        copy.close()

    def test_export_lines_are_json(self, tmp_path):
        store = populated_store(tmp_path, n_tasks=5)
        dump = tmp_path / "dump.ndjson"
        store.export(dump)
        store.close()
        lines = dump.read_text().splitlines()
        assert lines
        for line in lines:
            json.loads(line)


class TestDocumentSeeding:
    def test_documents_survive_a_namespace_hop(self, tmp_path):
        source = MemoryStore(tmp_path / "a", "src")
        gate = IngestGate(source)
        originals = []
        for i in range(4):
            record = make_record(
                description=f"rank the quarterly survey results batch {i}",
                correctness=1.0 if i % 2 == 0 else 0.1,
            )
            gate.commit(record)
            originals.append(record)

        seed_file = tmp_path / "seed.ndjson"
        seed_file.write_text(
            "".join(record.to_document() + "\n" for record in originals)
        )
        source.close()

        target = MemoryStore(tmp_path / "b", "dst")
        target_gate = IngestGate(target)
        ids = []
        for line in seed_file.read_text().splitlines():
            record = ExperienceRecord.from_document(line)
            record.node_id = None  # let the new namespace assign identity
            ids.append(target_gate.commit(record))

        assert len(ids) == 4
        for node_id, original in zip(ids, originals):
            loaded = target_gate.store.experience(node_id)
            assert loaded.goal.task_description == original.goal.task_description
            assert loaded.signature == original.signature
            assert loaded.evaluation.overall == original.evaluation.overall
        hits = hits_of(target)
        assert hits, "seeded experiences should be retrievable"
        target.close()
