"""End-to-end wiring: cache -> planner -> validation -> DataOps -> execution.

``Pipeline.answer_question`` drives one question through the full loop:
cache lookup (hits still get validated), plan generation on a miss,
structural validation plus the optional heuristic audit, the DataOps
remediation loop on any failure (bounded by the iteration budget), wave
execution with resume-from-unexecuted-nodes after runtime fixes, answer
synthesis, and finally cache insertion of the validated plan.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping

from .adapters import (
    ExternalPlanner,
    PatternTranslator,
    Planner,
    PlannerMissError,
    ScriptedPlanner,
)
from .cache import PlanCache
from .dataops import (
    ActionKind,
    DEFAULT_MAX_ITERATIONS,
    EditRecord,
    ExternalReplanner,
    NoOpReplanner,
    Replanner,
    diagnose,
    remediate,
)
from .executor import (
    ExecutionEvent,
    ExecutorConfig,
    execute_plan,
    make_default_adapters,
)
from .lineage import LineageLog, LineageRecord
from .plan_ir import Context, NodeStatus, Plan
from .stores.store import Store, load_store
from .validator import HeuristicAuditor, audit_plan, validate_plan

logger = logging.getLogger(__name__)

EXIT_CODES = {"ok": 0, "invalid_plan": 2, "execution_failed": 3, "unrecoverable": 4, "no_plan": 4}


@dataclass
class PipelineConfig:
    store_dir: str | None = None
    cache_capacity: int = 128
    tau: float = 0.85
    alpha: float = 0.5
    top_k: int = 5
    max_parallel: int | None = None
    max_fix_iterations: int = DEFAULT_MAX_ITERATIONS
    node_timeout: float = 30.0
    inline_threshold: int = 100
    slimming: bool = True
    planner: str | None = None  # "scripted:<file>" or "external:<command>"
    replanner: str | None = None  # "external:<command>"
    context_role: str = "default"
    policy_flags: tuple[str, ...] = ()
    dataops: bool = True
    audit: bool = True
    cache_enabled: bool = True
    cache_file: str | None = None
    lineage_path: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.cache_capacity < 1:
            raise ValueError("cache_capacity must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.max_fix_iterations < 0:
            raise ValueError("max_fix_iterations must be >= 0")
        if self.max_parallel is not None and self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if isinstance(self.policy_flags, list):
            self.policy_flags = tuple(self.policy_flags)

    @property
    def context(self) -> Context:
        return Context(role=self.context_role, policy_flags=frozenset(self.policy_flags))

    def executor_config(self) -> ExecutorConfig:
        return ExecutorConfig(
            max_parallel=self.max_parallel,
            node_timeout=self.node_timeout,
            slimming=self.slimming,
            inline_threshold=self.inline_threshold,
        )


def _coerce_env(raw: str, f: dataclasses.Field) -> Any:
    name = f.name
    if name in ("policy_flags",):
        return tuple(s for s in raw.split(",") if s)
    if f.type in ("bool",):
        return raw.lower() in ("1", "true", "yes", "on")
    if name in ("cache_capacity", "top_k", "max_fix_iterations", "inline_threshold", "max_parallel"):
        return int(raw)
    if name in ("tau", "alpha", "node_timeout"):
        return float(raw)
    if name in ("slimming", "dataops", "audit", "cache_enabled"):
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    **overrides: Any,
) -> PipelineConfig:
    """Build a config with precedence: defaults < file < ADOT_* env < overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        data.update(json.loads(Path(path).read_text(encoding="utf-8")))
    env = os.environ if env is None else env
    for f in dataclasses.fields(PipelineConfig):
        key = f"ADOT_{f.name.upper()}"
        if key in env:
            data[f.name] = _coerce_env(env[key], f)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**data)


def build_planner(spec: str | Planner | None) -> Planner | None:
    if spec is None or not isinstance(spec, str):
        return spec
    if spec.startswith("scripted:"):
        return ScriptedPlanner.from_file(spec.split(":", 1)[1])
    if spec.startswith("external:"):
        return ExternalPlanner(spec.split(":", 1)[1])
    raise ValueError(f"unknown planner spec {spec!r}")


def build_replanner(spec: str | Replanner | None) -> Replanner:
    if spec is None:
        return NoOpReplanner()
    if not isinstance(spec, str):
        return spec
    if spec.startswith("external:"):
        return ExternalReplanner(spec.split(":", 1)[1])
    if spec in ("noop", "none"):
        return NoOpReplanner()
    raise ValueError(f"unknown replanner spec {spec!r}")


def scrub_plan(plan: Plan) -> Plan:
    """Reset execution state so a plan can be cached and re-run fresh."""
    nodes = tuple(
        replace(sq, status=NodeStatus.PENDING, partial_result_columns=None)
        for sq in plan.subquestions
    )
    return replace(plan, subquestions=nodes)


@dataclass
class PipelineResult:
    status: str  # ok | execution_failed | unrecoverable | no_plan
    final_answer: str | None = None
    answers: tuple = ()
    events: tuple = ()
    feedback: tuple = ()
    history: tuple = ()
    messages: tuple = ()
    plan: Plan | None = None
    cache_strategy: str | None = None
    lineage: LineageLog | None = None
    lineage_path: str | None = None

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]


class Pipeline:
    """One store + cache + planner wired together; sessions share the cache.

    Instrumentation counters (``planner_calls``, ``validation_calls``) back
    the contracts that cache hits bypass planning but never validation.
    """

    def __init__(
        self,
        store: Store,
        config: PipelineConfig | None = None,
        planner: Planner | None = None,
        replanner: Replanner | None = None,
        cache: PlanCache | None = None,
        auditor: Any = None,
        adapters: Mapping | None = None,
    ):
        self.store = store
        self.config = config or PipelineConfig()
        self.planner = planner if planner is not None else build_planner(self.config.planner)
        self.replanner = replanner if replanner is not None else build_replanner(self.config.replanner)
        if cache is not None:
            self.cache = cache
        elif self.config.cache_file and Path(self.config.cache_file).exists():
            self.cache = PlanCache.load(self.config.cache_file)
        else:
            self.cache = PlanCache(capacity=self.config.cache_capacity, tau=self.config.tau)
        self.auditor = auditor if auditor is not None else (HeuristicAuditor() if self.config.audit else None)
        self.adapters = adapters or make_default_adapters(
            store, k=self.config.top_k, translator=PatternTranslator()
        )
        self.planner_calls = 0
        self.validation_calls = 0

    @classmethod
    def from_config(cls, config: PipelineConfig) -> "Pipeline":
        if not config.store_dir:
            raise ValueError("config.store_dir is required")
        store = load_store(config.store_dir)
        store.index.alpha = config.alpha
        return cls(store=store, config=config)

    def save_cache(self) -> None:
        if self.config.cache_file:
            self.cache.save(self.config.cache_file)

    def _record_dataops(self, lineage: LineageLog, action, diagnoses) -> None:
        lineage.append(
            LineageRecord(
                kind="dataops",
                status=action.kind.value,
                extra={
                    "diagnoses": [d.error_class.value for d in diagnoses],
                    "messages": list(action.messages),
                },
            )
        )

    def answer_question(
        self,
        question: str,
        on_event: Callable[[ExecutionEvent], None] | None = None,
    ) -> PipelineResult:
        cfg = self.config
        signature = self.store.signature
        context = cfg.context
        lineage = LineageLog(cfg.lineage_path)
        history: list[EditRecord] = []

        try:
            plan, cache_strategy = self._obtain_plan(question, signature, context, lineage)
        except PlannerMissError:
            lineage.close()
            return PipelineResult(status="no_plan", messages=("no plan available for this question",),
                                  lineage=lineage, lineage_path=cfg.lineage_path)
        if plan is None:
            lineage.close()
            return PipelineResult(status="no_plan", messages=("no planner configured",),
                                  lineage=lineage, lineage_path=cfg.lineage_path)

        plan = replace(plan, source_query=question, schema_signature=signature, context=context)
        planned_fresh = cache_strategy is None

        bindings: dict = {}
        exec_result = None
        all_events: list[ExecutionEvent] = []
        stage = "validate"
        while True:
            if stage == "validate":
                self.validation_calls += 1
                report = validate_plan(plan, self.store.schema)
                items: list = list(report.errors)
                if not items and self.auditor is not None:
                    items = list(audit_plan(plan, question, self.store.schema, self.auditor).errors)
                if not items:
                    stage = "execute"
                    continue
                failure_stage = "validate"
            else:
                exec_result = execute_plan(
                    plan,
                    self.store,
                    adapters=self.adapters,
                    config=cfg.executor_config(),
                    lineage=lineage,
                    on_event=on_event,
                    initial_bindings=bindings,
                )
                all_events.extend(exec_result.events)
                bindings = dict(exec_result.bindings)
                plan = exec_result.plan_after
                if not exec_result.feedback:
                    break
                items = list(exec_result.feedback)
                failure_stage = "execute"

            terminal_status = "unrecoverable" if failure_stage == "validate" else "execution_failed"
            if not cfg.dataops:
                lineage.close()
                return PipelineResult(
                    status=terminal_status,
                    messages=tuple(
                        getattr(i, "detail", None) or getattr(i, "message", str(i)) for i in items
                    ),
                    feedback=tuple(items),
                    history=tuple(history),
                    plan=plan,
                    cache_strategy=cache_strategy,
                    events=tuple(all_events),
                    final_answer=exec_result.final_answer if exec_result else None,
                    lineage=lineage,
                    lineage_path=cfg.lineage_path,
                )

            diagnoses = diagnose(items)
            action = remediate(
                plan, self.store.schema, history, diagnoses,
                replanner=self.replanner, max_iterations=cfg.max_fix_iterations,
            )
            history.append(
                EditRecord(
                    iteration=len(history) + 1,
                    diagnosis_classes=tuple(d.error_class.value for d in diagnoses),
                    action_kind=action.kind.value,
                    delta_summary="; ".join(action.messages),
                )
            )
            self._record_dataops(lineage, action, diagnoses)

            if action.kind in (ActionKind.FIX, ActionKind.REPLAN):
                if action.kind is ActionKind.REPLAN:
                    bindings = _reusable_bindings(plan, action.plan, bindings)
                plan = action.plan
                stage = "validate"
                continue
            lineage.close()
            return PipelineResult(
                status=terminal_status,
                messages=action.messages,
                feedback=tuple(items),
                history=tuple(history),
                plan=plan,
                cache_strategy=cache_strategy,
                events=tuple(all_events),
                final_answer=exec_result.final_answer if exec_result else None,
                lineage=lineage,
                lineage_path=cfg.lineage_path,
            )

        if planned_fresh and cfg.cache_enabled:
            self.cache.insert(question, signature, context, scrub_plan(plan))
            self.save_cache()
        lineage.close()
        return PipelineResult(
            status="ok",
            final_answer=exec_result.final_answer,
            answers=exec_result.answers,
            events=tuple(all_events),
            history=tuple(history),
            plan=plan,
            cache_strategy=cache_strategy,
            lineage=lineage,
            lineage_path=cfg.lineage_path,
        )

    def _obtain_plan(
        self, question: str, signature: str, context: Context, lineage: LineageLog
    ) -> tuple[Plan | None, str | None]:
        if self.config.cache_enabled:
            hit = self.cache.lookup(question, signature, context)
            if hit is not None:
                lineage.append(
                    LineageRecord(kind="cache", status="hit", extra={"strategy": hit.strategy})
                )
                return hit.plan, hit.strategy
        if self.planner is None:
            return None, None
        self.planner_calls += 1
        return self.planner.generate(question), None


def _reusable_bindings(old_plan: Plan, new_plan: Plan, bindings: Mapping) -> dict:
    """After a replan, keep bindings only where label and question survive."""
    old_by_label = {sq.label: sq for sq in old_plan.subquestions}
    keep: dict = {}
    for sq in new_plan.subquestions:
        prior = old_by_label.get(sq.label)
        if (
            prior is not None
            and sq.executed
            and prior.question == sq.question
            and sq.label in bindings
        ):
            keep[sq.label] = bindings[sq.label]
    return keep


def answer_question(question: str, config: PipelineConfig) -> PipelineResult:
    """Convenience one-shot: build a pipeline from config and ask."""
    return Pipeline.from_config(config).answer_question(question)
