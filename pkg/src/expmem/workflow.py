"""Five-phase task workflow over an experience memory.

Each task runs through plan -> retrieve -> iterate (generate/validate) ->
evaluate -> ingest.  Every phase except evaluation can be toggled off, and
the named presets (A0..A5, R1, EG1, EG2) are just bundles of toggles:

=======  ====  ========  =======  ======  =====  =====
preset   plan  retrieve  iterate  ingest  judge  tests
=======  ====  ========  =======  ======  =====  =====
A0       -     -         -        -       -      -
A1       x     x         x        x       -      x
A2/A3    x     x         x        x       x      x
A4       x     x         -        x       -      -
A5       x     x         x        x       x*     x
R1       x     semantic  x        x       x      x
EG1      x     struct.   x        x       x      x
EG2      x     x         x        x       x      x
=======  ====  ========  =======  ======  =====  =====

(* strong judge: structured patch suggestions in its feedback.)

The engine is deliberately model-free: generation, validation, and judging
are injected hooks.  What the engine owns is the contract around them —

* the agent never sees a task's hidden oracle: every agent call renders the
  full visible context to text first and refuses to continue if the oracle
  string appears anywhere in it;
* a failing hook fails the task but never loses the trace: a failure
  experience is still assembled (and committed when ingest is on);
* iteration intents only escalate (exploration -> refinement ->
  error_correction) and a stuck loop — byte-identical validator feedback
  twice in a row — sets a divergence marker on the next agent call;
* with ingest off, memory is read-only: reruns leave the store untouched;
* ``epoch_boundary`` commit mode defers all ingestion to the end of the
  epoch and applies it in input task order, which makes whole runs
  reproducible at any parallelism.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

from .errors import AnswerLeakageError, HookFailureError
from .experience import (
    DEFAULT_THETA,
    DEFAULT_WEIGHTS,
    Budgets,
    EvidenceItem,
    ExperienceRecord,
    GoalReflection,
    IterationIntent,
    IterationStep,
    ProcedureReflection,
    ProcedureStep,
    assemble_experience,
)
from .ingest import EvaluationInput, IngestConfig, IngestGate, decompose_feedback
from .metrics import MetricsLedger, TaskResult, compute_metrics
from .retrieval import RetrievalBundle, RetrievalConfig, Retriever
from .signatures import EMPTY_SIGNATURE, OP_PREFIX, RawStep, StructuralSignature
from .store import MemoryStore

COMMIT_MODES = ("immediate", "epoch_boundary")
PLACEHOLDER_ARTIFACT = "<generation failed>"
DIVERGENCE_MARKER = "note: previous feedback repeated verbatim; diverge from the current approach"

PHASES = ("plan", "retrieve", "iterate", "evaluate", "ingest")


# --------------------------------------------------------------------------
# configuration and presets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WorkflowConfig:
    """Phase toggles plus the loop/commit parameters."""

    enable_planning: bool = True
    enable_retrieval: bool = True
    enable_iteration: bool = True
    enable_ingest: bool = True
    enable_judge: bool = True
    generate_tests: bool = True
    strong_judge: bool = False
    max_iterations: int = 3
    quality_threshold: float = DEFAULT_THETA
    quality_weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    parallelism: int = 1
    commit_mode: str = "immediate"
    prompt_item_budget: int = 400

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.commit_mode not in COMMIT_MODES:
            raise ValueError(f"commit_mode {self.commit_mode!r} not in {COMMIT_MODES}")
        if not 0.0 <= self.quality_threshold <= 1.0:
            raise ValueError("quality_threshold outside [0, 1]")


_ALL_ON = WorkflowConfig()

PRESETS: dict[str, WorkflowConfig] = {
    "A0": WorkflowConfig(
        enable_planning=False,
        enable_retrieval=False,
        enable_iteration=False,
        enable_ingest=False,
        enable_judge=False,
        generate_tests=False,
    ),
    "A1": replace(_ALL_ON, enable_judge=False),
    "A2": _ALL_ON,
    "A3": _ALL_ON,
    "A4": replace(
        _ALL_ON, enable_iteration=False, enable_judge=False, generate_tests=False
    ),
    "A5": replace(_ALL_ON, strong_judge=True),
    "R1": replace(
        _ALL_ON,
        retrieval=RetrievalConfig(enable_structural=False, enable_graph=False),
    ),
    "EG1": replace(_ALL_ON, retrieval=RetrievalConfig(enable_semantic=False)),
    "EG2": _ALL_ON,
}


def preset(name: str, **overrides) -> WorkflowConfig:
    """A named preset, optionally with field overrides.

    Raises:
        KeyError: unknown preset name.
    """
    base = PRESETS[name]
    return replace(base, **overrides) if overrides else base


# --------------------------------------------------------------------------
# task inputs and agent-visible context
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    """A task to run.  ``hidden_oracle`` is the opaque ground truth used only
    for final verification — it must never reach the agent."""

    id: str
    description: str
    domain: str
    hidden_oracle: str


@dataclass
class PlanDecomposition:
    """Plan-phase output: understanding, entities, steps, dry signature."""

    understanding: str = ""
    entities: tuple[str, ...] = ()
    steps: tuple[RawStep, ...] = ()
    signature: StructuralSignature = EMPTY_SIGNATURE


@dataclass(frozen=True)
class MemoryView:
    """Structured slice of one retrieved experience, as the agent sees it."""

    node_id: str
    status: str
    score: float
    structural: float
    ops: tuple[str, ...]
    error_classes: tuple[str, ...]
    has_patches: bool
    domain: str

    def to_text(self) -> str:
        marker = "+" if self.status == "successful" else "-"
        patches = "yes" if self.has_patches else "no"
        return (
            f"view{marker} {self.node_id} score={self.score:.3f} "
            f"sigma={self.structural:.2f} domain={self.domain} "
            f"ops={'>'.join(self.ops) or '-'} "
            f"errors={','.join(self.error_classes) or '-'} patches={patches}"
        )


@dataclass
class AgentContext:
    """Everything the generation hook is allowed to see.

    ``to_text()`` is the single rendering of that visibility surface; the
    engine scans it for the hidden oracle before every agent call, so any
    channel that could smuggle the answer in (memory text, feedback,
    structured views) is covered by one check.
    """

    task_id: str
    description: str
    domain: str
    understanding: str = ""
    entities: tuple[str, ...] = ()
    steps: tuple[str, ...] = ()
    signature_ops: tuple[str, ...] = ()
    memory_text: str = ""
    positives: tuple[MemoryView, ...] = ()
    negatives: tuple[MemoryView, ...] = ()
    iteration: int = 1
    intent: IterationIntent = IterationIntent.EXPLORATION
    feedback_history: tuple[str, ...] = ()
    diverge: bool = False

    def to_text(self) -> str:
        lines = [
            f"task: {self.task_id}",
            f"description: {self.description}",
            f"domain: {self.domain}",
            f"iteration: {self.iteration} intent: {self.intent.value}",
        ]
        if self.understanding:
            lines.append(f"understanding: {self.understanding}")
        if self.entities:
            lines.append("entities: " + ", ".join(self.entities))
        if self.steps:
            lines.append("steps:")
            lines.extend(f"  {i}. {s}" for i, s in enumerate(self.steps, 1))
        if self.signature_ops:
            lines.append("signature: " + " -> ".join(self.signature_ops))
        if self.diverge:
            lines.append(DIVERGENCE_MARKER)
        if self.feedback_history:
            lines.append("feedback so far:")
            lines.extend(
                f"  [{i}] {fb}" for i, fb in enumerate(self.feedback_history, 1)
            )
        for view in (*self.positives, *self.negatives):
            lines.append(view.to_text())
        if self.memory_text:
            lines.append("memory:")
            lines.append(self.memory_text)
        return "\n".join(lines)


# --------------------------------------------------------------------------
# hooks and adapters
# --------------------------------------------------------------------------


class DomainAdapter:
    """Domain-specific planning and evidence collection.

    Subclasses override what they need; the defaults are a workable
    minimum (single-step plan, no evidence).
    """

    def task_understanding(self, task: TaskSpec) -> str:
        return task.description

    def extract_procedural_steps(self, task: TaskSpec) -> tuple[RawStep, ...]:
        return (RawStep(text=task.description),)

    def collect_evidence(
        self, task: TaskSpec, artifact: str, trace: tuple[IterationStep, ...]
    ) -> tuple[EvidenceItem, ...]:
        return ()

    def procedure_name(self, task: TaskSpec) -> str:
        return task.domain or "task"


@dataclass
class WorkflowHooks:
    """Injected model-side behaviour.

    agent(ctx) -> artifact string.  Never receives the TaskSpec: its whole
        world is the AgentContext.
    validator(task, artifact, ctx) -> (verdict 0/1, feedback).  The
        self-generated test harness; only called when generate_tests is on.
    oracle(task, artifact) -> bool.  Final hidden verification; always runs.
    teacher(task, trace, oracle_ok, strong) -> EvaluationInput.  Judge
        phase; only called when enable_judge is on.
    """

    agent: Callable[[AgentContext], str]
    oracle: Callable[[TaskSpec, str], bool]
    validator: Callable[[TaskSpec, str, AgentContext], tuple[int, str]] | None = None
    teacher: Callable[..., EvaluationInput] | None = None


@dataclass
class ExecutionOutcome:
    """What one task run produced."""

    task_id: str
    solved: bool
    iterations_used: int
    experience: ExperienceRecord | None = None
    committed_node_id: str | None = None
    failed_phase: str | None = None
    phase_timings: dict = field(default_factory=dict)


@dataclass
class _PendingIngest:
    """Deferred assembly/commit material for epoch_boundary mode."""

    outcome: ExecutionOutcome
    task: TaskSpec
    plan: PlanDecomposition
    trace: tuple[IterationStep, ...]
    evaluation: EvaluationInput
    oracle_ok: bool
    evidence: tuple[EvidenceItem, ...]


# --------------------------------------------------------------------------
# the engine
# --------------------------------------------------------------------------


class WorkflowEngine:
    """Runs tasks through the five phases against one memory store."""

    def __init__(
        self,
        store: MemoryStore,
        config: WorkflowConfig,
        hooks: WorkflowHooks,
        adapter: DomainAdapter | None = None,
    ):
        self.store = store
        self.config = config
        self.hooks = hooks
        self.adapter = adapter or DomainAdapter()
        self.retriever = Retriever(store, config.retrieval)
        self.gate = IngestGate(
            store,
            IngestConfig(weights=config.quality_weights, theta=config.quality_threshold),
        )
        # Write-mode extraction + commit are serialized so immediate mode
        # stays safe under parallel task execution.
        self._ingest_lock = threading.Lock()

    # ----- phase plumbing -----

    def _call(self, phase: str, fn, *args):
        """Run a hook, wrapping any failure with its phase.  Leakage errors
        are never wrapped — they must surface as themselves."""
        try:
            return fn(*args)
        except (AnswerLeakageError, HookFailureError):
            raise
        except Exception as exc:
            raise HookFailureError(phase, exc) from exc

    def _guarded_agent_call(self, task: TaskSpec, ctx: AgentContext) -> str:
        rendered = ctx.to_text()
        if task.hidden_oracle and task.hidden_oracle in rendered:
            raise AnswerLeakageError(
                f"hidden oracle for {task.id} appears in the agent context"
            )
        artifact = self._call("generate", self.hooks.agent, ctx)
        return "" if artifact is None else str(artifact)

    def _plan(self, task: TaskSpec) -> PlanDecomposition:
        if not self.config.enable_planning:
            return PlanDecomposition()
        understanding = self._call("plan", self.adapter.task_understanding, task)
        steps = tuple(self._call("plan", self.adapter.extract_procedural_steps, task))
        signature = self.store.extractor.tokens(steps)  # dry: no graph writes
        entities = tuple(dict.fromkeys(e for step in steps for e in step.entities))
        return PlanDecomposition(
            understanding=understanding,
            entities=entities,
            steps=steps,
            signature=signature,
        )

    def _memory_views(
        self, bundle: RetrievalBundle | None
    ) -> tuple[tuple[MemoryView, ...], tuple[MemoryView, ...]]:
        if bundle is None:
            return (), ()

        def view(hit) -> MemoryView:
            node = self.store.graph.get_node(hit.node_id)
            return MemoryView(
                node_id=hit.node_id,
                status=hit.status.value,
                score=hit.score,
                structural=hit.breakdown.structural,
                ops=tuple(node.payload.get("ops", ())),
                error_classes=tuple(node.payload.get("error_classes", ())),
                has_patches=bool(self.store.experience(hit.node_id).patches),
                domain=node.domain,
            )

        return (
            tuple(view(h) for h in bundle.positives),
            tuple(view(h) for h in bundle.negatives),
        )

    def _iterate(
        self, task: TaskSpec, ctx: AgentContext
    ) -> tuple[list[IterationStep], str]:
        """The generate/validate loop.  Returns (trace, final artifact)."""
        cfg = self.config
        limit = cfg.max_iterations if cfg.enable_iteration else 1
        trace: list[IterationStep] = []
        artifact = ""
        error_mode = False
        prev_feedback: str | None = None
        diverge = False

        for j in range(1, limit + 1):
            if j == 1:
                intent = IterationIntent.EXPLORATION
            elif error_mode:
                intent = IterationIntent.ERROR_CORRECTION
            else:
                intent = IterationIntent.REFINEMENT
            ctx.iteration = j
            ctx.intent = intent
            ctx.diverge = diverge
            artifact = self._guarded_agent_call(task, ctx)

            if not (cfg.generate_tests and self.hooks.validator is not None):
                # No self-generated tests: nothing to drive a loop, one shot.
                # The verdict is filled in from the final verification later.
                trace.append(
                    IterationStep(
                        intent=intent, artifact=artifact, result="", validation=0
                    )
                )
                break

            verdict, feedback = self._call(
                "validate", self.hooks.validator, task, artifact, ctx
            )
            verdict = int(verdict)
            trace.append(
                IterationStep(
                    intent=intent,
                    artifact=artifact,
                    result="pass" if verdict else "fail",
                    validation=verdict,
                    feedback=feedback,
                )
            )
            if verdict == 1:
                break
            if feedback:
                error_mode = True
                ctx.feedback_history = (*ctx.feedback_history, feedback)
            diverge = prev_feedback is not None and feedback == prev_feedback
            prev_feedback = feedback

        return trace, artifact

    # ----- assembly and ingest -----

    def _assemble(
        self,
        task: TaskSpec,
        plan: PlanDecomposition,
        trace: tuple[IterationStep, ...],
        evaluation: EvaluationInput,
        oracle_ok: bool,
        evidence: tuple[EvidenceItem, ...],
        write: bool,
    ) -> ExperienceRecord:
        """Build the record; with ``write`` the extraction also materializes
        operation/entity/topic nodes (the graph half of ingestion)."""
        if write:
            extraction = self.store.extractor.extract(list(plan.steps), task.domain)
            signature = extraction.signature
            entity_ids = extraction.entity_ids
        else:
            signature = plan.signature
            entity_ids = ()
        goal = GoalReflection(
            task_description=task.description,
            task_embedding=tuple(self.store.embedder.embed(task.description)),
            domain=task.domain,
            constraints=(),
            verification_contract=(
                ("self-generated tests", "hidden verification")
                if self.config.generate_tests
                else ("hidden verification",)
            ),
            signature=signature,
            entity_ids=entity_ids,
        )
        steps = tuple(
            ProcedureStep(op=op[len(OP_PREFIX):] if op.startswith(OP_PREFIX) else op)
            for op in signature.ops
        )
        procedure = ProcedureReflection(
            ref_id=f"proc:{self.adapter.procedure_name(task)}:v1",
            steps=steps,
            budgets=Budgets(
                max_tool_calls=4 * max(1, len(steps)),
                max_retries=1,
                max_iterations=self.config.max_iterations,
            ),
        )
        failed_feedback = "\n".join(
            step.feedback for step in trace if step.validation == 0 and step.feedback
        )
        combined = "\n".join(
            part for part in (failed_feedback, evaluation.teacher_feedback) if part
        )
        errors, patches = decompose_feedback(combined, trigger_signature=signature.ops)
        return assemble_experience(
            goal=goal,
            procedure=procedure,
            trace=trace,
            correctness=evaluation.correctness,
            efficiency=evaluation.efficiency,
            completeness=evaluation.completeness,
            teacher_feedback=evaluation.teacher_feedback,
            oracle_reject=not oracle_ok,
            evidence=evidence,
            error_registry=errors,
            patches=patches,
            weights=self.config.quality_weights,
            theta=self.config.quality_threshold,
            ground_truth=task.hidden_oracle,
        )

    def _ingest(self, pending: _PendingIngest) -> None:
        """Assemble (write mode when committing) and finish the outcome."""
        write = self.config.enable_ingest
        if write:
            with self._ingest_lock:
                record = self._assemble(
                    pending.task,
                    pending.plan,
                    pending.trace,
                    pending.evaluation,
                    pending.oracle_ok,
                    pending.evidence,
                    write=True,
                )
                pending.outcome.committed_node_id = self.gate.commit(record)
        else:
            record = self._assemble(
                pending.task,
                pending.plan,
                pending.trace,
                pending.evaluation,
                pending.oracle_ok,
                pending.evidence,
                write=False,
            )
        pending.outcome.experience = record

    # ----- public API -----

    def run_task(self, task: TaskSpec) -> ExecutionOutcome:
        """Run one task through all enabled phases (ingesting immediately)."""
        pending = self._run_phases(task)
        timer = time.perf_counter()
        self._ingest(pending)
        pending.outcome.phase_timings["ingest"] = time.perf_counter() - timer
        return pending.outcome

    def _run_phases(self, task: TaskSpec) -> _PendingIngest:
        """Everything up to (but not including) assembly/ingest."""
        timings: dict[str, float] = {}
        plan = PlanDecomposition()
        trace: list[IterationStep] = []
        artifact = ""
        failed_phase: str | None = None

        timer = time.perf_counter()
        try:
            plan = self._plan(task)
        except HookFailureError as exc:
            failed_phase = exc.phase
        timings["plan"] = time.perf_counter() - timer

        bundle = None
        timer = time.perf_counter()
        if failed_phase is None and self.config.enable_retrieval:
            try:
                bundle = self.retriever.retrieve(task.description, plan.signature)
            except HookFailureError as exc:  # pragma: no cover - defensive
                failed_phase = exc.phase
        timings["retrieve"] = time.perf_counter() - timer

        timer = time.perf_counter()
        if failed_phase is None:
            positives, negatives = self._memory_views(bundle)
            ctx = AgentContext(
                task_id=task.id,
                description=task.description,
                domain=task.domain,
                understanding=plan.understanding,
                entities=plan.entities,
                steps=tuple(s.text for s in plan.steps),
                signature_ops=plan.signature.ops,
                memory_text=(
                    bundle.to_text(self.store, self.config.prompt_item_budget)
                    if bundle
                    else ""
                ),
                positives=positives,
                negatives=negatives,
            )
            try:
                trace, artifact = self._iterate(task, ctx)
            except HookFailureError as exc:
                failed_phase = exc.phase
        if failed_phase is not None and not trace:
            # A failed hook still leaves a (placeholder) iteration behind so
            # the failure is a first-class experience.
            trace = [
                IterationStep(
                    intent=IterationIntent.EXPLORATION,
                    artifact=PLACEHOLDER_ARTIFACT,
                    result="fail",
                    validation=0,
                    feedback=f"hook failure in {failed_phase}",
                )
            ]
            artifact = PLACEHOLDER_ARTIFACT
        timings["iterate"] = time.perf_counter() - timer

        timer = time.perf_counter()
        evidence: tuple[EvidenceItem, ...] = ()
        try:
            evidence = tuple(
                self._call(
                    "evaluate", self.adapter.collect_evidence, task, artifact, tuple(trace)
                )
            )
        except HookFailureError as exc:
            failed_phase = failed_phase or exc.phase

        # Hidden verification always runs, even on a placeholder artifact.
        oracle_ok = False
        try:
            oracle_ok = bool(self._call("evaluate", self.hooks.oracle, task, artifact))
        except HookFailureError as exc:
            failed_phase = failed_phase or exc.phase
        if trace and not (self.config.generate_tests and self.hooks.validator):
            trace[-1] = replace(
                trace[-1],
                validation=int(oracle_ok),
                result="pass" if oracle_ok else "fail",
            )

        evaluation: EvaluationInput | None = None
        if (
            failed_phase is None
            and self.config.enable_judge
            and self.hooks.teacher is not None
        ):
            try:
                evaluation = self._call(
                    "judge",
                    self.hooks.teacher,
                    task,
                    tuple(trace),
                    oracle_ok,
                    self.config.strong_judge,
                )
            except HookFailureError as exc:
                failed_phase = exc.phase
        if failed_phase is not None:
            oracle_ok = False
            evaluation = EvaluationInput(
                correctness=0.0, teacher_feedback=f"hook failure in {failed_phase}"
            )
        elif evaluation is None:
            evaluation = EvaluationInput(correctness=1.0 if oracle_ok else 0.0)
        timings["evaluate"] = time.perf_counter() - timer

        outcome = ExecutionOutcome(
            task_id=task.id,
            solved=oracle_ok,
            iterations_used=len(trace),
            failed_phase=failed_phase,
            phase_timings=timings,
        )
        return _PendingIngest(
            outcome=outcome,
            task=task,
            plan=plan,
            trace=tuple(trace),
            evaluation=evaluation,
            oracle_ok=oracle_ok,
            evidence=evidence,
        )

    def run_epoch(self, tasks: list[TaskSpec]) -> list[ExecutionOutcome]:
        """Run one epoch over ``tasks``.

        With ``commit_mode="immediate"`` each task ingests as it finishes
        (arrival order under parallelism — not reproducible across worker
        counts).  With ``"epoch_boundary"`` all ingestion happens after the
        last task, in input task order, so runs are bit-reproducible for any
        parallelism.
        """
        boundary = self.config.commit_mode == "epoch_boundary"
        workers = self.config.parallelism

        if not boundary:
            # immediate: each task's experience lands as it finishes, so
            # later tasks in the same epoch already retrieve it.
            if workers == 1:
                return [self.run_task(task) for task in tasks]
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(self.run_task, tasks))

        if workers == 1:
            pendings = [self._run_phases(task) for task in tasks]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                pendings = list(pool.map(self._run_phases, tasks))
        for pending in pendings:
            timer = time.perf_counter()
            self._ingest(pending)
            pending.outcome.phase_timings["ingest"] = time.perf_counter() - timer
        return [p.outcome for p in pendings]

    def run_epochs(
        self, tasks: list[TaskSpec], n_epochs: int
    ) -> tuple[MetricsLedger, list[list[ExecutionOutcome]]]:
        """Run the same task list for ``n_epochs`` epochs and score it."""
        all_outcomes: list[list[ExecutionOutcome]] = []
        results: list[list[TaskResult]] = []
        for _ in range(n_epochs):
            outcomes = self.run_epoch(tasks)
            all_outcomes.append(outcomes)
            results.append(
                [
                    TaskResult(
                        task_id=o.task_id,
                        success=o.solved,
                        iterations=o.iterations_used,
                    )
                    for o in outcomes
                ]
            )
        return compute_metrics(results), all_outcomes
