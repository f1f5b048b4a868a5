"""Run metrics: per-epoch rates, iteration costs, and fail-to-pass flips.

The unit of input is a rectangular grid of task results — every epoch must
cover exactly the same task ids — from which the ledger derives success
rate, cumulative success rate (ever-solved coverage), mean iterations,
iteration histograms, first-attempt rate, and the flip list (tasks that
failed in some epoch and passed in a later one).  Epoch numbers are 1-based
everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import RaggedInputError


@dataclass(frozen=True)
class TaskResult:
    """One task attempt inside one epoch."""

    task_id: str
    success: bool
    iterations: int

    @property
    def first_attempt_pass(self) -> bool:
        return self.success and self.iterations == 1


@dataclass(frozen=True)
class Flip:
    """A task that failed, then passed for the first time later."""

    task_id: str
    last_fail_epoch: int
    first_pass_epoch: int


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    success_rate: float
    cumulative_success_rate: float
    mean_iterations: float
    first_attempt_rate: float
    iteration_histogram: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "success_rate": self.success_rate,
            "cumulative_success_rate": self.cumulative_success_rate,
            "mean_iterations": self.mean_iterations,
            "first_attempt_rate": self.first_attempt_rate,
            "iteration_histogram": {str(k): v for k, v in self.iteration_histogram.items()},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EpochMetrics":
        return cls(
            epoch=obj["epoch"],
            success_rate=obj["success_rate"],
            cumulative_success_rate=obj["cumulative_success_rate"],
            mean_iterations=obj["mean_iterations"],
            first_attempt_rate=obj["first_attempt_rate"],
            iteration_histogram={int(k): v for k, v in obj.get("iteration_histogram", {}).items()},
        )


@dataclass
class MetricsLedger:
    epochs: list[EpochMetrics]
    flips: list[Flip]
    n_tasks: int

    def epoch(self, number: int) -> EpochMetrics:
        """1-based lookup."""
        return self.epochs[number - 1]

    @property
    def final_success_rate(self) -> float:
        return self.epochs[-1].success_rate if self.epochs else 0.0

    def to_text(self) -> str:
        lines = ["epoch  sr      csr     mean_iter  first_attempt"]
        for m in self.epochs:
            lines.append(
                f"{m.epoch:<6d} {m.success_rate:<7.3f} "
                f"{m.cumulative_success_rate:<7.3f} {m.mean_iterations:<10.3f} "
                f"{m.first_attempt_rate:.3f}"
            )
        lines.append(f"flips: {len(self.flips)}")
        for flip in self.flips:
            lines.append(
                f"  {flip.task_id}: fail@{flip.last_fail_epoch} -> "
                f"pass@{flip.first_pass_epoch}"
            )
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_tasks": self.n_tasks,
                "epochs": [m.to_dict() for m in self.epochs],
                "flips": [
                    {
                        "task_id": f.task_id,
                        "last_fail_epoch": f.last_fail_epoch,
                        "first_pass_epoch": f.first_pass_epoch,
                    }
                    for f in self.flips
                ],
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricsLedger":
        obj = json.loads(text)
        return cls(
            epochs=[EpochMetrics.from_dict(e) for e in obj["epochs"]],
            flips=[Flip(**f) for f in obj.get("flips", [])],
            n_tasks=obj["n_tasks"],
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "MetricsLedger":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def compute_metrics(epochs: list[list[TaskResult]]) -> MetricsLedger:
    """Derive the full ledger from per-epoch result lists.

    Raises:
        RaggedInputError: epochs cover different task-id sets (or are empty
            while others are not) — the grid must be rectangular.
    """
    if not epochs:
        return MetricsLedger(epochs=[], flips=[], n_tasks=0)

    id_sets = [sorted(r.task_id for r in epoch) for epoch in epochs]
    first = id_sets[0]
    if len(set(first)) != len(first):
        raise RaggedInputError("duplicate task ids within an epoch")
    for e, ids in enumerate(id_sets[1:], 2):
        if ids != first:
            raise RaggedInputError(
                f"epoch {e} covers {len(ids)} task(s) that differ from epoch 1"
            )

    n_tasks = len(first)
    solved: set[str] = set()
    out: list[EpochMetrics] = []
    for number, epoch in enumerate(epochs, 1):
        successes = sum(1 for r in epoch if r.success)
        solved |= {r.task_id for r in epoch if r.success}
        histogram: dict[int, int] = {}
        for r in epoch:
            histogram[r.iterations] = histogram.get(r.iterations, 0) + 1
        out.append(
            EpochMetrics(
                epoch=number,
                success_rate=successes / n_tasks,
                cumulative_success_rate=len(solved) / n_tasks,
                mean_iterations=sum(r.iterations for r in epoch) / n_tasks,
                first_attempt_rate=sum(1 for r in epoch if r.first_attempt_pass) / n_tasks,
                iteration_histogram=dict(sorted(histogram.items())),
            )
        )

    by_task: dict[str, list[tuple[int, bool]]] = {}
    for number, epoch in enumerate(epochs, 1):
        for r in epoch:
            by_task.setdefault(r.task_id, []).append((number, r.success))
    flips: list[Flip] = []
    for task_id in first:
        history = by_task[task_id]
        first_pass = next((e for e, ok in history if ok), None)
        if first_pass is None:
            continue
        fails_before = [e for e, ok in history if not ok and e < first_pass]
        if fails_before:
            flips.append(Flip(task_id, max(fails_before), first_pass))

    return MetricsLedger(epochs=out, flips=flips, n_tasks=n_tasks)


def plot_learning_curves(
    curves: dict[str, MetricsLedger], path: Path | str, title: str = "learning curves"
) -> None:
    """Write a PNG of success rate (solid) and cumulative rate (dashed)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, ledger in curves.items():
        xs = [m.epoch for m in ledger.epochs]
        ax.plot(xs, [m.success_rate for m in ledger.epochs], marker="o", label=label)
        ax.plot(
            xs,
            [m.cumulative_success_rate for m in ledger.epochs],
            linestyle="--",
            alpha=0.5,
        )
    ax.set_xlabel("epoch")
    ax.set_ylabel("success rate")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
