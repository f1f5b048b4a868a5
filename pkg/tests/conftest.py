"""Shared fixtures: throwaway stores and small experience factories."""

from __future__ import annotations

import pytest

from expmem import (
    Budgets,
    EvaluationInput,
    ExperienceRecord,
    GoalReflection,
    IngestGate,
    IterationIntent,
    IterationStep,
    MemoryStore,
    ProcedureReflection,
    ProcedureStep,
    StructuralSignature,
    assemble_experience,
)
from expmem.signatures import OP_PREFIX


@pytest.fixture
def store(tmp_path):
    s = MemoryStore(tmp_path, "test")
    yield s
    s.close()


@pytest.fixture
def gate_(store):
    return IngestGate(store)


def make_goal(
    description: str = "rank the quarterly survey results",
    domain: str = "alpha",
    ops: tuple[str, ...] = ("ranking", "lookup", "comparison"),
    entity_ids: tuple[str, ...] = (),
) -> GoalReflection:
    signature = StructuralSignature(ops=tuple(OP_PREFIX + op for op in ops))
    return GoalReflection(
        task_description=description,
        task_embedding=(),
        domain=domain,
        constraints=("respond deterministically",),
        verification_contract=("hidden verification",),
        signature=signature,
        entity_ids=entity_ids,
    )


def make_procedure(
    ops: tuple[str, ...] = ("ranking", "lookup", "comparison"),
    name: str = "alpha-survey",
    version: int = 1,
) -> ProcedureReflection:
    return ProcedureReflection(
        ref_id=f"proc:{name}:v{version}",
        params={"window": 4},
        steps=tuple(
            ProcedureStep(op=op, args={"position": i}, stop_when="step output validated")
            for i, op in enumerate(ops)
        ),
        budgets=Budgets(max_tool_calls=12, max_retries=1, max_iterations=3),
        checkpoints=("inputs parsed",),
    )


def make_trace(n: int = 1, passed: bool = True) -> tuple[IterationStep, ...]:
    steps = []
    for j in range(n):
        last = j == n - 1
        steps.append(
            IterationStep(
                intent=IterationIntent.EXPLORATION if j == 0 else IterationIntent.REFINEMENT,
                artifact=f"candidate answer {j + 1}",
                result="pass" if (last and passed) else "fail",
                validation=int(last and passed),
                feedback="" if (last and passed) else "ERROR: wrong_operation @step 1",
            )
        )
    return tuple(steps)


def make_record(
    description: str = "rank the quarterly survey results",
    domain: str = "alpha",
    ops: tuple[str, ...] = ("ranking", "lookup", "comparison"),
    correctness: float = 1.0,
    passed: bool = True,
    **kwargs,
) -> ExperienceRecord:
    return assemble_experience(
        goal=make_goal(description, domain, ops),
        procedure=make_procedure(ops),
        trace=make_trace(passed=passed),
        correctness=correctness,
        efficiency=kwargs.pop("efficiency", 0.5),
        completeness=kwargs.pop("completeness", 1.0),
        teacher_feedback=kwargs.pop("teacher_feedback", "verified: approach sound"),
        **kwargs,
    )


def quality_eval(correctness: float = 1.0) -> EvaluationInput:
    return EvaluationInput(
        correctness=correctness,
        efficiency=0.5,
        completeness=1.0,
        teacher_feedback="verified: approach sound",
    )
