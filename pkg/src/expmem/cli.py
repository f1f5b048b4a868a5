"""Command-line interface.

Namespaces are directories under a root (default ``./memstore``); every
subcommand addresses one namespace except ``make-tasks`` and ``plot``,
which work on plain files::

    expmem init lab
    expmem make-tasks tasks.txt --count 200
    expmem run lab --preset EG2 --epochs 10 --seed 0 --tasks tasks.txt
    expmem retrieve lab --task "alpha_aggregate ledger rollup" --sig aggregation,ranking
    expmem inspect lab exp:000042
    expmem compact lab
    expmem metrics lab --out ledger.json
    expmem export lab snapshot.ndjson
    expmem import lab2 snapshot.ndjson
    expmem seed lab experiences.ndjson
    expmem plot curves.png run1.json run2.json

Exit status is 0 only when the command fully succeeded.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import MemoryEngineError
from .experience import ExperienceRecord
from .harness import SimulatedWorld, make_universe, read_tasks, write_tasks
from .ingest import IngestGate
from .maintenance import compact
from .metrics import MetricsLedger, plot_learning_curves
from .retrieval import Retriever
from .signatures import OP_PREFIX, StructuralSignature
from .store import MemoryStore, list_namespaces
from .workflow import PRESETS, WorkflowEngine, preset

METRICS_NAME = "metrics.json"


def _store(args) -> MemoryStore:
    return MemoryStore(args.root, args.namespace)


def cmd_init(args) -> int:
    store = _store(args)
    store.close()
    print(f"initialized namespace {args.namespace!r} under {Path(args.root).resolve()}")
    return 0


def cmd_seed(args) -> int:
    store = _store(args)
    gate = IngestGate(store)
    count = 0
    for lineno, line in enumerate(
        Path(args.file).read_text(encoding="utf-8").splitlines(), 1
    ):
        if not line.strip():
            continue
        record = ExperienceRecord.from_document(line)
        record.node_id = None  # committed fresh into this namespace
        gate.commit(record)
        count += 1
    store.close()
    print(f"seeded {count} experiences into {args.namespace!r}")
    return 0


def cmd_run(args) -> int:
    tasks = read_tasks(args.tasks)
    world = SimulatedWorld(tasks, seed=args.seed)
    config = preset(
        args.preset,
        max_iterations=args.max_iterations,
        parallelism=args.parallelism,
        commit_mode=args.commit_mode,
    )
    store = _store(args)
    engine = WorkflowEngine(store, config, world.hooks(), world.adapter())
    ledger, _ = engine.run_epochs(world.specs(tasks), args.epochs)
    ledger.save(store.dir / METRICS_NAME)
    if args.metrics_out:
        ledger.save(args.metrics_out)
    store.close()
    print(
        f"preset {args.preset} seed {args.seed}: {len(tasks)} tasks x "
        f"{args.epochs} epochs into {args.namespace!r}"
    )
    print(ledger.to_text())
    return 0


def _parse_signature(raw: str) -> StructuralSignature:
    ops = []
    for part in raw.split(","):
        name = part.strip()
        if not name:
            continue
        ops.append(name if name.startswith(OP_PREFIX) else OP_PREFIX + name)
    return StructuralSignature(ops=tuple(ops))


def cmd_retrieve(args) -> int:
    store = _store(args)
    signature = _parse_signature(args.sig) if args.sig else StructuralSignature(ops=())
    bundle = Retriever(store).retrieve(args.task, signature)
    if not bundle:
        print("no hits")
    else:
        print(bundle.to_text(store))
    diag = bundle.diagnostics
    print(
        f"[channels] semantic={len(diag['semantic_hits'])} "
        f"structural={len(diag['structural_hits'])} graph={len(diag['graph_hits'])} "
        f"candidates={diag['candidates']}"
    )
    store.close()
    return 0


def cmd_inspect(args) -> int:
    store = _store(args)
    try:
        node = store.graph.get_node(args.exp_id)
        record = store.experience(args.exp_id)
    finally:
        store.close()
    print(record.to_pretty())
    print(
        f"[node] quality={node.payload['quality']:.4f} status={node.payload['status']} "
        f"commit_seq={node.payload['commit_seq']} archived={node.archived} "
        f"stale={node.stale}"
    )
    return 0


def cmd_compact(args) -> int:
    store = _store(args)
    report = compact(store)
    store.close()
    print(report.to_text())
    return 0


def cmd_metrics(args) -> int:
    path = Path(args.root) / args.namespace / METRICS_NAME
    if not path.exists():
        print(f"no saved metrics for namespace {args.namespace!r} (run first)", file=sys.stderr)
        return 1
    ledger = MetricsLedger.load(path)
    print(ledger.to_text())
    if args.out:
        ledger.save(args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_export(args) -> int:
    store = _store(args)
    store.export(args.file)
    store.close()
    print(f"exported {args.namespace!r} to {args.file}")
    return 0


def cmd_import(args) -> int:
    store = _store(args)
    try:
        count = store.import_log(args.file)
    finally:
        store.close()
    print(f"imported {count} records into {args.namespace!r}")
    return 0


def cmd_make_tasks(args) -> int:
    domains = tuple(d.strip() for d in args.domains.split(",") if d.strip())
    lo, hi = (float(x) for x in args.difficulty.split(","))
    tasks = make_universe(
        args.count, domains=domains, difficulty_range=(lo, hi), prefix=args.prefix
    )
    write_tasks(args.file, tasks)
    print(f"wrote {len(tasks)} tasks to {args.file}")
    return 0


def cmd_plot(args) -> int:
    curves = {}
    for path in args.ledgers:
        curves[Path(path).stem] = MetricsLedger.load(path)
    plot_learning_curves(curves, args.out, title=args.title)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expmem",
        description="Experience-memory substrate and workflow engine.",
    )
    parser.add_argument(
        "--root",
        default="./memstore",
        help="directory holding all namespaces (default: ./memstore)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create an empty namespace")
    p.add_argument("namespace")
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("seed", help="commit experience documents from a file (one JSON per line)")
    p.add_argument("namespace")
    p.add_argument("file")
    p.set_defaults(fn=cmd_seed)

    p = sub.add_parser("run", help="run a simulated multi-epoch workload")
    p.add_argument("namespace")
    p.add_argument("--preset", choices=sorted(PRESETS), default="A2")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tasks", required=True, help="task file (see make-tasks)")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument(
        "--commit-mode",
        choices=("immediate", "epoch_boundary"),
        default="epoch_boundary",
    )
    p.add_argument("--max-iterations", type=int, default=3)
    p.add_argument("--metrics-out", help="also save the metrics ledger here")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("retrieve", help="query the hybrid retriever")
    p.add_argument("namespace")
    p.add_argument("--task", required=True, help="task description text")
    p.add_argument("--sig", help="comma-separated op names for the structural channel")
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("inspect", help="pretty-print one experience")
    p.add_argument("namespace")
    p.add_argument("exp_id")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("compact", help="dominance/consolidation/staleness pass")
    p.add_argument("namespace")
    p.set_defaults(fn=cmd_compact)

    p = sub.add_parser("metrics", help="show the namespace's last run metrics")
    p.add_argument("namespace")
    p.add_argument("--out", help="also write the ledger JSON here")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("export", help="write the namespace log to a file")
    p.add_argument("namespace")
    p.add_argument("file")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("import", help="load an exported log into a namespace")
    p.add_argument("namespace")
    p.add_argument("file")
    p.set_defaults(fn=cmd_import)

    p = sub.add_parser("make-tasks", help="generate a synthetic task file")
    p.add_argument("file")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--domains", default="alpha,beta,gamma")
    p.add_argument("--difficulty", default="0.4,1.0", help="lo,hi range")
    p.add_argument("--prefix", default="task")
    p.set_defaults(fn=cmd_make_tasks)

    p = sub.add_parser("plot", help="plot learning curves from saved ledgers")
    p.add_argument("out", help="output PNG path")
    p.add_argument("ledgers", nargs="+", help="metrics JSON files")
    p.add_argument("--title", default="learning curves")
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MemoryEngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        # downstream pager/head closed early; not our error
        sys.stderr.close()
        return 0


if __name__ == "__main__":
    sys.exit(main())
