"""Synthetic workload: templates, task generation, the simulated world."""

from __future__ import annotations

import hashlib
from itertools import combinations

import pytest

from expmem import (
    MemoryStore,
    SimulatedWorld,
    StructuralSignature,
    build_task,
    make_transfer_universe,
    make_universe,
    read_tasks,
    write_tasks,
)
from expmem.errors import MalformedPayloadError
from expmem.harness import (
    DEFAULT_DOMAINS,
    STEP_PHRASES,
    TEMPLATES,
    answer_token,
    entities_for,
)
from expmem.workflow import AgentContext, MemoryView


class TestTemplates:
    def test_twenty_templates_with_cycling_lengths(self):
        assert len(TEMPLATES) == 20
        assert {len(t) for t in TEMPLATES} == {5, 6, 7}

    def test_pairwise_structural_overlap_is_low(self):
        for a, b in combinations(TEMPLATES, 2):
            sig_a = StructuralSignature.from_names(a)
            sig_b = StructuralSignature.from_names(b)
            assert sig_a.similarity(sig_b) <= 0.5, (a, b)

    def test_every_op_has_a_canonical_step_phrase(self, tmp_path):
        store = MemoryStore(tmp_path, "canon")
        for template in TEMPLATES:
            for op in template:
                phrase = STEP_PHRASES[op]
                assert store.canon.canonical(phrase) == op
        store.close()


class TestTaskGeneration:
    def test_universe_is_deterministic(self):
        a = make_universe(50)
        b = make_universe(50)
        assert [(t.id, t.template_id, t.domain, t.difficulty) for t in a] == [
            (t.id, t.template_id, t.domain, t.difficulty) for t in b
        ]

    def test_round_robin_covers_templates_and_domains(self):
        tasks = make_universe(120)
        assert {t.template_id for t in tasks} == set(range(20))
        assert {t.domain for t in tasks} == set(DEFAULT_DOMAINS)

    def test_difficulty_within_range(self):
        for t in make_universe(100, difficulty_range=(0.55, 0.8)):
            assert 0.55 <= t.difficulty <= 0.8

    def test_description_embeds_domain_and_entities(self):
        task = make_universe(1)[0]
        e1, e2 = entities_for(task.domain, task.template_id)
        assert task.id in task.description
        assert e1 in task.description and e2 in task.description

    def test_hidden_oracle_is_id_derived(self):
        task = make_universe(1)[0]
        expected = "ans-" + hashlib.sha256(task.id.encode()).hexdigest()[:12]
        assert task.hidden_oracle == expected == answer_token(task.id)

    def test_planted_step_is_a_valid_position(self):
        for t in make_universe(60):
            assert 1 <= t.planted_step <= len(t.ops)

    def test_unknown_failure_class_rejected(self):
        with pytest.raises(MalformedPayloadError):
            build_task("t-1", 0, "alpha", planted_failure="not_a_class")

    def test_transfer_universe_separates_domains(self):
        train, test = make_transfer_universe(40, 20, ("alpha", "beta"), "delta")
        assert {t.domain for t in train} == {"alpha", "beta"}
        assert {t.domain for t in test} == {"delta"}
        assert all(t.id.startswith("train-") for t in train)
        assert all(t.id.startswith("xfer-") for t in test)
        # every test template also appears in training (signature-matched)
        assert {t.template_id for t in test} <= {t.template_id for t in train}

    def test_task_file_round_trip(self, tmp_path):
        tasks = make_universe(30)
        path = tmp_path / "tasks.txt"
        write_tasks(path, tasks)
        back = read_tasks(path)
        assert [(t.id, t.template_id, t.domain, t.planted_failure) for t in back] == [
            (t.id, t.template_id, t.domain, t.planted_failure) for t in tasks
        ]
        for a, b in zip(back, tasks):
            # the file format carries 6 decimals of difficulty
            assert a.difficulty == pytest.approx(b.difficulty, abs=1e-6)

    def test_task_file_reads_are_reproducible(self, tmp_path):
        path = tmp_path / "tasks.txt"
        write_tasks(path, make_universe(30))
        first = read_tasks(path)
        second = read_tasks(path)
        assert [(t.id, t.difficulty) for t in first] == [
            (t.id, t.difficulty) for t in second
        ]


def ctx_for(world, task, positives=(), negatives=(), feedback=()):
    t = world.tasks[task.id]
    return AgentContext(
        task_id=task.id,
        description=task.description,
        domain=task.domain,
        understanding="",
        entities=(),
        steps=(),
        signature_ops=tuple("op:" + op for op in t.ops),
        memory_text="",
        positives=list(positives),
        negatives=list(negatives),
        iteration=1,
        intent="exploration",
        feedback_history=list(feedback),
    )


def view_for(task, status="successful", error_classes=()):
    return MemoryView(
        node_id="exp:000001",
        status=status,
        score=0.9,
        structural=1.0,
        ops=tuple("op:" + op for op in task.ops),
        error_classes=tuple(error_classes),
        has_patches=False,
        domain=task.domain,
    )


class TestSimulatedWorld:
    def test_draw_is_constant_across_epochs_and_iterations(self):
        tasks = make_universe(5)
        world = SimulatedWorld(tasks, seed=7)
        u = [world.success_threshold(tasks[0].id) for _ in range(3)]
        assert u[0] == u[1] == u[2]

    def test_different_seeds_redraw(self):
        tasks = make_universe(5)
        a = SimulatedWorld(tasks, seed=1).success_threshold(tasks[0].id)
        b = SimulatedWorld(tasks, seed=2).success_threshold(tasks[0].id)
        assert a != b

    def test_probability_base_is_one_minus_difficulty(self):
        tasks = make_universe(3)
        world = SimulatedWorld(tasks, seed=0)
        task = tasks[0]
        p = world.success_probability(ctx_for(world, task.spec()))
        assert p == pytest.approx(1.0 - task.difficulty)

    def test_matching_positives_boost_capped_at_two(self):
        tasks = make_universe(3)
        world = SimulatedWorld(tasks, seed=0)
        task = tasks[0]
        spec = task.spec()
        base = world.success_probability(ctx_for(world, spec))
        views = [view_for(task) for _ in range(4)]
        boosted = world.success_probability(ctx_for(world, spec, positives=views))
        assert boosted == pytest.approx(min(1.0, base + 0.2 * 2))

    def test_negative_boost_requires_matching_error_class(self):
        tasks = make_universe(3)
        world = SimulatedWorld(tasks, seed=0)
        task = tasks[0]
        spec = task.spec()
        base = world.success_probability(ctx_for(world, spec))
        wrong = view_for(task, status="failed", error_classes=("tool_failure",))
        right = view_for(task, status="failed", error_classes=(task.planted_failure,))
        if task.planted_failure == "tool_failure":
            wrong = view_for(task, status="failed", error_classes=("schema_mismatch",))
        p_wrong = world.success_probability(ctx_for(world, spec, negatives=[wrong]))
        p_right = world.success_probability(ctx_for(world, spec, negatives=[right]))
        assert p_wrong == pytest.approx(base)
        assert p_right == pytest.approx(min(1.0, base + 0.1))

    def test_feedback_history_boost(self):
        tasks = make_universe(3)
        world = SimulatedWorld(tasks, seed=0)
        task = tasks[0]
        spec = task.spec()
        base = world.success_probability(ctx_for(world, spec))
        p = world.success_probability(
            ctx_for(world, spec, feedback=["fb one", "fb two"])
        )
        assert p == pytest.approx(min(1.0, base + 0.15 * 2))

    def test_success_rate_matches_probability_monte_carlo(self):
        """Oracle: across many seeds the empirical rate of u < P approaches P."""
        task = build_task("mc-0001", 4, "alpha", difficulty=0.6)
        hits = 0
        n = 1000
        for seed in range(n):
            world = SimulatedWorld([task], seed=seed)
            ctx = ctx_for(world, task.spec(), positives=[view_for(task)] * 2)
            p = world.success_probability(ctx)
            assert p == pytest.approx(0.8)
            if world.success_threshold(task.id) < p:
                hits += 1
        assert hits / n == pytest.approx(0.8, abs=0.03)

    def test_agent_answers_contain_the_token_only_on_success(self):
        tasks = make_universe(40)
        world = SimulatedWorld(tasks, seed=3)
        for task in tasks:
            ctx = ctx_for(world, task.spec())
            artifact = world.agent(ctx)
            expected = world.success_threshold(task.id) < world.success_probability(ctx)
            assert (task.hidden_oracle in artifact) == expected

    def test_validator_feedback_is_structured_and_iteration_stamped(self):
        tasks = make_universe(3)
        world = SimulatedWorld(tasks, seed=0)
        task = tasks[0]
        ctx = ctx_for(world, task.spec())
        ok, feedback = world.validator(task.spec(), "answer: wrong-12345678", ctx)
        assert ok == 0
        assert f"ERROR: {task.planted_failure} @step {task.planted_step} iter 1" in feedback
        assert "CAUSE:" in feedback
