"""Command line surface: ingest, validate, run, ask, cache, trace.

Exit codes: 0 ok, 2 invalid plan, 3 execution failure, 4 unrecoverable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cache import PlanCache
from .lineage import trace_answer
from .pipeline import Pipeline, PipelineConfig, load_config
from .plan_ir import Plan, parse_plan
from .stores.ingest import CHUNK_OVERLAP_CHARS, CHUNK_TARGET_CHARS, IngestError, ingest
from .stores.schema import GlobalSchema
from .stores.store import load_store
from .validator import validate_plan


class _FixedPlanner:
    """Planner that always returns one pre-parsed plan (used by `run`)."""

    def __init__(self, plan: Plan):
        self._plan = plan

    def generate(self, question: str) -> Plan:
        return self._plan


def _print_event(event) -> None:
    print(json.dumps(event.to_json()), flush=True)


def _cmd_ingest(args: argparse.Namespace) -> int:
    try:
        report = ingest(
            args.tables,
            args.docs,
            args.out,
            row_map_path=args.row_map,
            target=args.target_chars,
            overlap=args.overlap,
        )
    except IngestError as exc:
        print(f"ingest failed: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(report.to_json(), indent=2))
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    plan = parse_plan(Path(args.plan).read_text(encoding="utf-8"))
    schema = GlobalSchema.from_json(json.loads(Path(args.schema).read_text(encoding="utf-8")))
    report = validate_plan(plan, schema)
    if args.json:
        print(json.dumps(report.to_json(), indent=2))
    elif report.is_valid:
        print("plan is valid")
    else:
        for err in report.errors:
            print(f"{err.code.value}: {err.detail}")
    return 0 if report.is_valid else 2


def _bool_flag(value: str) -> bool:
    return value.lower() in ("on", "true", "1", "yes")


def _cmd_run(args: argparse.Namespace) -> int:
    plan = parse_plan(Path(args.plan).read_text(encoding="utf-8"))
    store = load_store(args.store)
    config = PipelineConfig(
        store_dir=args.store,
        max_parallel=1 if args.sequential else args.max_parallel,
        max_fix_iterations=args.max_fix_iterations,
        dataops=_bool_flag(args.dataops),
        cache_enabled=False,
        audit=False,
        lineage_path=args.lineage,
        replanner=args.replanner,
    )
    pipeline = Pipeline(store=store, config=config, planner=_FixedPlanner(plan))
    result = pipeline.answer_question(
        plan.source_query or "", on_event=_print_event if args.stream else None
    )
    if result.final_answer:
        print(result.final_answer)
    for message in result.messages:
        print(message, file=sys.stderr)
    if result.status == "ok":
        return 0
    if result.status == "execution_failed":
        return 3
    return 2  # never validated -> invalid plan


def _cmd_ask(args: argparse.Namespace) -> int:
    config = load_config(
        args.config,
        store_dir=args.store,
        planner=args.planner,
        replanner=args.replanner,
        cache_file=args.cache_file,
        lineage_path=args.lineage,
        max_parallel=1 if args.sequential else args.max_parallel,
        max_fix_iterations=args.max_fix_iterations,
        tau=args.tau,
        alpha=args.alpha,
        top_k=args.top_k,
        cache_capacity=args.cache_capacity,
        node_timeout=args.node_timeout,
        context_role=args.context_role,
        policy_flags=tuple(args.policy_flag or ()) or None,
        dataops=_bool_flag(args.dataops) if args.dataops else None,
        audit=_bool_flag(args.audit) if args.audit else None,
        cache_enabled=False if args.no_cache else None,
    )
    pipeline = Pipeline.from_config(config)
    result = pipeline.answer_question(
        args.question, on_event=_print_event if args.stream else None
    )
    if result.final_answer:
        print(result.final_answer)
    if result.status != "ok":
        print(f"status: {result.status}", file=sys.stderr)
        for message in result.messages:
            print(message, file=sys.stderr)
    return result.exit_code


def _cmd_cache(args: argparse.Namespace) -> int:
    path = Path(args.cache_file)
    cache = PlanCache.load(path) if path.exists() else PlanCache()
    if args.action == "stats":
        stats = cache.stats.to_json()
        stats.update(
            {
                "entries": len(cache),
                "capacity": cache.capacity,
                "tau": cache.tau,
                "provenance": [e.provenance_summary for e in cache.entries()],
            }
        )
        print(json.dumps(stats, indent=2))
        return 0
    cache.clear()
    cache.save(path)
    print("cache cleared")
    return 0


def _cmd_trace(args: argparse.Namespace) -> int:
    refs = trace_answer(args.lineage, args.label)
    print(json.dumps([r.to_json() for r in refs], indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adot",
        description="DAG-orchestrated multi-hop query engine over a hybrid data lake",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a store directory from tables + documents")
    p.add_argument("--tables", required=True)
    p.add_argument("--docs", required=True)
    p.add_argument("--row-map", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--target-chars", type=int, default=CHUNK_TARGET_CHARS)
    p.add_argument("--overlap", type=int, default=CHUNK_OVERLAP_CHARS)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("validate", help="validate a plan file against a schema file")
    p.add_argument("--plan", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("run", help="validate and execute a plan file against a store")
    p.add_argument("--plan", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--stream", action="store_true")
    p.add_argument("--max-parallel", type=int, default=None)
    p.add_argument("--sequential", action="store_true")
    p.add_argument("--lineage", default=None)
    p.add_argument("--dataops", default="on", choices=["on", "off"])
    p.add_argument("--max-fix-iterations", type=int, default=3)
    p.add_argument("--replanner", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("ask", help="answer a question end to end")
    p.add_argument("--question", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--planner", default=None, help="scripted:<file> or external:<command>")
    p.add_argument("--replanner", default=None, help="external:<command>")
    p.add_argument("--config", default=None, help="JSON config file (ADOT_* env overrides apply)")
    p.add_argument("--stream", action="store_true")
    p.add_argument("--cache-file", default=None)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--lineage", default=None)
    p.add_argument("--max-parallel", type=int, default=None)
    p.add_argument("--sequential", action="store_true")
    p.add_argument("--max-fix-iterations", type=int, default=None)
    p.add_argument("--dataops", default=None, choices=["on", "off"])
    p.add_argument("--audit", default=None, choices=["on", "off"])
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--cache-capacity", type=int, default=None)
    p.add_argument("--node-timeout", type=float, default=None)
    p.add_argument("--context-role", default=None)
    p.add_argument("--policy-flag", action="append", default=None)
    p.set_defaults(func=_cmd_ask)

    p = sub.add_parser("cache", help="inspect or clear a persistent cache file")
    p.add_argument("action", choices=["stats", "clear"])
    p.add_argument("--cache-file", required=True)
    p.set_defaults(func=_cmd_cache)

    p = sub.add_parser("trace", help="provenance closure for an answer label")
    p.add_argument("--lineage", required=True)
    p.add_argument("--label", required=True)
    p.set_defaults(func=_cmd_trace)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
