"""A deterministic simulated world for exercising the workflow engine.

Real deployments plug an LLM into the engine's hooks; this module plugs in
arithmetic.  Every task carries a hidden answer token derived from its id,
and the simulated agent "solves" a task when a per-(seed, task) uniform
draw falls under its current success probability

    P = min(1, (1 - difficulty)
               + boost_pos  * min(max_pos, matching positives)
               + boost_neg  * min(max_neg, matching negatives)
               + boost_iter * prior iterations with structured feedback)

where a positive matches when its ops are structurally similar (sigma >=
0.6) to the current plan and a negative matches when it records the task's
planted failure class.  The draw is a pure function of (seed, task id) —
not of the epoch or iteration — so a task's outcome changes across epochs
only because memory changed.  That turns learning curves into closed-form
quantities a test can assert exactly.

The universe is 20 operation templates (pairwise structural similarity
capped at 0.5, so the 0.6 retrieval gate never fires across templates)
instantiated over domains with fully domain-prefixed vocabulary, which
keeps cross-domain cosine similarity near zero while cross-domain
same-template structural similarity stays exactly 1.0 — the regime the
transfer experiments need.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MalformedPayloadError
from .experience import ErrorClass, EvidenceItem, EvidenceKind, IterationStep
from .ingest import EvaluationInput
from .signatures import OP_PREFIX, RawStep, StructuralSignature
from .workflow import AgentContext, DomainAdapter, TaskSpec, WorkflowHooks

# 20 op templates; pairwise LCS/min-length <= 0.5 by construction.
TEMPLATES: tuple[tuple[str, ...], ...] = (
    ("ranking", "lookup", "comparison", "normalization", "clustering"),
    ("schema_traversal", "temporal_filter", "retry", "parsing", "aggregation", "deduplication"),
    ("tokenization", "schema_traversal", "api_call", "data_cleaning", "unit_conversion", "temporal_filter", "validation"),
    ("validation", "temporal_filter", "joining", "parsing", "schema_traversal"),
    ("retry", "tokenization", "aggregation", "joining", "clustering", "lookup"),
    ("tokenization", "schema_traversal", "lookup", "summarization", "normalization", "unit_conversion", "joining"),
    ("schema_traversal", "parsing", "error_handling", "comparison", "selection"),
    ("validation", "comparison", "parsing", "aggregation", "tokenization", "selection"),
    ("parsing", "retry", "sampling", "data_loading", "aggregation", "tokenization", "caching"),
    ("clustering", "data_cleaning", "deduplication", "aggregation", "parsing"),
    ("imputation", "temporal_filter", "tokenization", "schema_traversal", "classification", "data_cleaning"),
    ("visualization", "sampling", "parsing", "validation", "indexing", "ranking", "export"),
    ("tokenization", "unit_conversion", "export", "deduplication", "selection"),
    ("joining", "caching", "data_loading", "imputation", "indexing", "lookup"),
    ("temporal_filter", "tokenization", "selection", "api_call", "visualization", "ranking", "feature_extraction"),
    ("export", "selection", "classification", "temporal_filter", "aggregation"),
    ("api_call", "validation", "data_loading", "indexing", "ranking", "comparison"),
    ("unit_conversion", "visualization", "validation", "schema_traversal", "sampling", "temporal_filter", "indexing"),
    ("ranking", "imputation", "deduplication", "classification", "visualization"),
    ("tokenization", "caching", "export", "temporal_filter", "retry", "error_handling"),
)

# One canonical synonym phrasing per op, used as the raw step text.
STEP_PHRASES: dict[str, str] = {
    "entity_resolution": "resolve entities",
    "schema_traversal": "traverse schema",
    "temporal_filter": "filter by time",
    "aggregation": "aggregate records",
    "comparison": "compare results",
    "data_loading": "load data",
    "data_cleaning": "clean data",
    "joining": "join tables",
    "projection": "select columns",
    "selection": "filter rows",
    "ranking": "rank results",
    "deduplication": "remove duplicates",
    "normalization": "normalize values",
    "validation": "validate output",
    "export": "write output",
    "visualization": "plot results",
    "api_call": "call external api",
    "parsing": "parse response",
    "tokenization": "tokenize text",
    "classification": "classify items",
    "clustering": "cluster points",
    "sampling": "draw sample",
    "imputation": "fill missing values",
    "feature_extraction": "extract features",
    "indexing": "build index",
    "caching": "cache results",
    "retry": "retry step",
    "error_handling": "handle errors",
    "summarization": "summarize findings",
    "unit_conversion": "convert units",
    "lookup": "look up value",
}

ENTITY_NOUNS = (
    "ledger", "pipeline", "portfolio", "sensor", "invoice", "catalog",
    "shipment", "contract", "survey", "inventory", "forecast", "manifest",
)

ERROR_CLASS_VALUES = tuple(e.value for e in ErrorClass)

DEFAULT_DOMAINS = ("alpha", "beta", "gamma")
DEFAULT_DIFFICULTY = (0.4, 1.0)


def _fraction(text: str) -> float:
    """Uniform [0, 1) value derived from a string."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def answer_token(task_id: str) -> str:
    """The hidden answer for a task — recomputable from the id alone, which
    is how the simulated agent 'solves' tasks without ever being shown it."""
    return "ans-" + hashlib.sha256(task_id.encode("utf-8")).hexdigest()[:12]


def entities_for(domain: str, template_id: int) -> tuple[str, str]:
    first = ENTITY_NOUNS[(2 * template_id) % len(ENTITY_NOUNS)]
    second = ENTITY_NOUNS[(2 * template_id + 1) % len(ENTITY_NOUNS)]
    return (
        f"{domain}_{first}_{template_id:02d}",
        f"{domain}_{second}_{template_id:02d}",
    )


def _describe(task_id: str, template_id: int, domain: str) -> str:
    """Task description with fully domain-prefixed vocabulary, so cosine
    similarity across domains is near zero even for matching templates."""
    words: list[str] = []
    for op in TEMPLATES[template_id]:
        words.extend(STEP_PHRASES[op].split())
    themed = " ".join(f"{domain}_{w}" for w in words)
    e1, e2 = entities_for(domain, template_id)
    return f"{task_id}: {themed} {e1} {e2}"


@dataclass(frozen=True)
class SyntheticTask:
    """One simulated task instance."""

    id: str
    template_id: int
    domain: str
    difficulty: float
    planted_failure: str

    @property
    def description(self) -> str:
        return _describe(self.id, self.template_id, self.domain)

    @property
    def hidden_oracle(self) -> str:
        return answer_token(self.id)

    @property
    def ops(self) -> tuple[str, ...]:
        return TEMPLATES[self.template_id]

    @property
    def planted_step(self) -> int:
        """1-based index of the step where the planted failure manifests."""
        return 1 + int(_fraction(f"{self.id}|step") * len(self.ops))

    def spec(self) -> TaskSpec:
        return TaskSpec(
            id=self.id,
            description=self.description,
            domain=self.domain,
            hidden_oracle=self.hidden_oracle,
        )


def build_task(
    task_id: str,
    template_id: int,
    domain: str,
    difficulty: float | None = None,
    planted_failure: str | None = None,
) -> SyntheticTask:
    """A task with id-derived difficulty/failure defaults."""
    if difficulty is None:
        lo, hi = DEFAULT_DIFFICULTY
        difficulty = lo + (hi - lo) * _fraction(f"{task_id}|difficulty")
    if planted_failure is None:
        planted_failure = ERROR_CLASS_VALUES[
            int(_fraction(f"{task_id}|failure") * len(ERROR_CLASS_VALUES))
        ]
    if planted_failure not in ERROR_CLASS_VALUES:
        raise MalformedPayloadError(f"unknown failure class {planted_failure!r}")
    return SyntheticTask(
        id=task_id,
        template_id=template_id % len(TEMPLATES),
        domain=domain,
        difficulty=float(difficulty),
        planted_failure=planted_failure,
    )


def make_universe(
    n_tasks: int = 200,
    domains: tuple[str, ...] = DEFAULT_DOMAINS,
    difficulty_range: tuple[float, float] = DEFAULT_DIFFICULTY,
    prefix: str = "task",
) -> list[SyntheticTask]:
    """Round-robin tasks over (template, domain) combos.

    Difficulty is a per-task uniform draw over ``difficulty_range`` derived
    from the id, so the population mean success floor is analytic.
    """
    lo, hi = difficulty_range
    tasks = []
    for i in range(n_tasks):
        task_id = f"{prefix}-{i:04d}"
        tasks.append(
            build_task(
                task_id,
                template_id=i % len(TEMPLATES),
                domain=domains[(i // len(TEMPLATES)) % len(domains)],
                difficulty=lo + (hi - lo) * _fraction(f"{task_id}|difficulty"),
            )
        )
    return tasks


def make_transfer_universe(
    n_train: int = 120,
    n_test: int = 60,
    train_domains: tuple[str, ...] = ("alpha", "beta"),
    test_domain: str = "delta",
) -> tuple[list[SyntheticTask], list[SyntheticTask]]:
    """Training tasks in known domains plus signature-matched test tasks in
    an unseen domain: same templates (sigma 1.0), disjoint vocabulary."""
    train = make_universe(n_train, domains=train_domains, prefix="train")
    test = make_universe(n_test, domains=(test_domain,), prefix="xfer")
    return train, test


# --------------------------------------------------------------------------
# task file round-trip (one task per line: id,template,domain,difficulty,failure)
# --------------------------------------------------------------------------


def write_tasks(path: Path | str, tasks: list[SyntheticTask]) -> None:
    lines = ["# id,template,domain,difficulty,planted_failure"]
    for t in tasks:
        lines.append(
            f"{t.id},{t.template_id},{t.domain},{t.difficulty:.6f},{t.planted_failure}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_tasks(path: Path | str) -> list[SyntheticTask]:
    """Parse a task file written by :func:`write_tasks` (or by hand).

    Raises:
        MalformedPayloadError: a line does not have the five fields.
    """
    tasks = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 5:
            raise MalformedPayloadError(
                f"{path}:{lineno}: expected 5 comma-separated fields, got {len(parts)}"
            )
        task_id, template_id, domain, difficulty, planted = parts
        try:
            tasks.append(
                build_task(task_id, int(template_id), domain, float(difficulty), planted)
            )
        except ValueError as exc:
            raise MalformedPayloadError(f"{path}:{lineno}: {exc}") from exc
    return tasks


# --------------------------------------------------------------------------
# the simulated world: agent, validator, oracle, judge, adapter
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PseudoAgentConfig:
    """Success-probability shape; every boost is tunable."""

    boost_pos: float = 0.2
    boost_neg: float = 0.1
    boost_iter: float = 0.15
    max_pos: int = 2
    max_neg: int = 1
    sigma_gate: float = 0.6


class SyntheticAdapter(DomainAdapter):
    """Plans tasks from their template, with canon-synonym step texts."""

    def __init__(self, world: "SimulatedWorld"):
        self.world = world

    def _task(self, task: TaskSpec) -> SyntheticTask:
        return self.world.tasks[task.id]

    def task_understanding(self, task: TaskSpec) -> str:
        t = self._task(task)
        return (
            f"{len(t.ops)}-step template {t.template_id:02d} procedure "
            f"in the {t.domain} domain"
        )

    def extract_procedural_steps(self, task: TaskSpec) -> tuple[RawStep, ...]:
        t = self._task(task)
        ents = entities_for(t.domain, t.template_id)
        steps = []
        for i, op in enumerate(t.ops):
            steps.append(
                RawStep(
                    text=STEP_PHRASES[op],
                    entities=(ents[i % 2],),
                    topic=f"{t.domain} procedures" if i == 0 else None,
                )
            )
        return tuple(steps)

    def collect_evidence(
        self, task: TaskSpec, artifact: str, trace: tuple[IterationStep, ...]
    ) -> tuple[EvidenceItem, ...]:
        verdict = "pass" if trace and trace[-1].validation == 1 else "fail"
        return (
            EvidenceItem.from_content(
                kind=EvidenceKind.TOOL_OUTPUT,
                locator=f"sim://{task.id}/run-log",
                content=f"{len(trace)} iterations; final check {verdict}",
                source_type="simulator",
                authority_score=0.5,
            ),
        )

    def procedure_name(self, task: TaskSpec) -> str:
        t = self._task(task)
        return f"{t.domain}-t{t.template_id:02d}"


class SimulatedWorld:
    """Deterministic hook implementations over a task registry."""

    def __init__(
        self,
        tasks: list[SyntheticTask],
        seed: int = 0,
        agent_config: PseudoAgentConfig | None = None,
    ):
        self.tasks: dict[str, SyntheticTask] = {t.id: t for t in tasks}
        self.seed = seed
        self.agent_config = agent_config or PseudoAgentConfig()

    def register(self, tasks: list[SyntheticTask]) -> None:
        for t in tasks:
            self.tasks[t.id] = t

    # ----- the per-(seed, task) success draw -----

    def success_threshold(self, task_id: str) -> float:
        """The uniform draw a task must beat.  Depends only on (seed, id),
        never on the epoch or iteration: outcomes change across epochs only
        through memory-driven probability changes."""
        return _fraction(f"{self.seed}|{task_id}|success")

    def success_probability(self, ctx: AgentContext) -> float:
        """The P described in the module docstring, computed from exactly
        what the agent context exposes."""
        task = self.tasks[ctx.task_id]
        cfg = self.agent_config
        base = 1.0 - task.difficulty
        own = StructuralSignature(ops=tuple(ctx.signature_ops))
        pos = 0
        for view in ctx.positives:
            similar = own.similarity(StructuralSignature(ops=tuple(view.ops)))
            if similar >= cfg.sigma_gate:
                pos += 1
        neg = sum(
            1 for view in ctx.negatives if task.planted_failure in view.error_classes
        )
        informed = len(ctx.feedback_history)
        return min(
            1.0,
            base
            + cfg.boost_pos * min(cfg.max_pos, pos)
            + cfg.boost_neg * min(cfg.max_neg, neg)
            + cfg.boost_iter * informed,
        )

    # ----- hooks -----

    def agent(self, ctx: AgentContext) -> str:
        task = self.tasks[ctx.task_id]
        if self.success_threshold(ctx.task_id) < self.success_probability(ctx):
            return (
                f"answer: {answer_token(ctx.task_id)} "
                f"(template {task.template_id:02d}, {len(task.ops)} steps)"
            )
        wrong = hashlib.sha256(
            f"{self.seed}|{ctx.task_id}|{ctx.iteration}|wrong".encode("utf-8")
        ).hexdigest()[:8]
        return f"answer: wrong-{wrong} error:{task.planted_failure}"

    def validator(
        self, task: TaskSpec, artifact: str, ctx: AgentContext
    ) -> tuple[int, str]:
        if task.hidden_oracle in artifact:
            return 1, ""
        t = self.tasks[task.id]
        step = t.planted_step
        return 0, (
            f"ERROR: {t.planted_failure} @step {step} iter {ctx.iteration}\n"
            f"CAUSE: simulated {t.planted_failure} at stage {step} (0.7)"
        )

    def oracle(self, task: TaskSpec, artifact: str) -> bool:
        return task.hidden_oracle in artifact

    def teacher(
        self,
        task: TaskSpec,
        trace: tuple[IterationStep, ...],
        oracle_ok: bool,
        strong: bool,
    ) -> EvaluationInput:
        n = max(1, len(trace))
        if oracle_ok:
            return EvaluationInput(
                correctness=1.0,
                efficiency=1.0 / n,
                completeness=1.0,
                teacher_feedback="verified: procedure sound and complete",
            )
        t = self.tasks[task.id]
        feedback = (
            f"judge: outcome incorrect after {n} iterations\n"
            "RECOVERY: retry_with_patch -> failed_recovery"
        )
        if strong:
            step = t.planted_step
            op = t.ops[step - 1]
            feedback += (
                f"\nPATCH: replace_logic @step{step}: "
                f"add a {t.planted_failure} guard before {op}"
            )
        return EvaluationInput(
            correctness=0.2,
            efficiency=1.0 / n,
            completeness=0.25,
            teacher_feedback=feedback,
        )

    # ----- wiring -----

    def hooks(self) -> WorkflowHooks:
        return WorkflowHooks(
            agent=self.agent,
            oracle=self.oracle,
            validator=self.validator,
            teacher=self.teacher,
        )

    def adapter(self) -> SyntheticAdapter:
        return SyntheticAdapter(self)

    def specs(self, tasks: list[SyntheticTask] | None = None) -> list[TaskSpec]:
        chosen = tasks if tasks is not None else sorted(
            self.tasks.values(), key=lambda t: t.id
        )
        return [t.spec() for t in chosen]
