"""Structural and semantic plan validation.

``validate_plan`` runs four phases over a parsed plan: structural node
checks, an exposure requirement, dependency-expression hygiene against the
global schema, and cycle detection. All findings are accumulated into one
report instead of stopping at the first error, so the remediation loop gets
the full picture. ``audit_plan`` adds a pluggable intent check on top.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Protocol

from .plan_ir import (
    Plan,
    Tool,
    TOOL_ALIASES,
    build_dependency_graph,
    find_cycle,
)
from .stores.schema import GlobalSchema


class ErrorCode(str, Enum):
    MISSING_FIELD = "MissingField"
    BAD_TOOL = "BadTool"
    BAD_LABEL = "BadLabel"
    BAD_QUESTION = "BadQuestion"
    MISSING_ANSWER_DESCRIPTION = "MissingAnswerDescription"
    NO_EXPOSED_ANSWER = "NoExposedAnswer"
    UNKNOWN_VARIABLE = "UnknownVariable"
    UNKNOWN_COLUMN = "UnknownColumn"
    CYCLIC_DEPENDENCY = "CyclicDependency"
    EMPTY_PLAN = "EmptyPlan"
    SEMANTIC_DRIFT = "SemanticDrift"


@dataclass(frozen=True)
class ValidationError:
    code: ErrorCode
    detail: str
    node_index: int | None = None

    def to_json(self) -> dict[str, Any]:
        return {"code": self.code.value, "node_index": self.node_index, "detail": self.detail}


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[ValidationError, ...]

    @property
    def is_valid(self) -> bool:
        return not self.errors

    def to_json(self) -> dict[str, Any]:
        return {"is_valid": self.is_valid, "errors": [e.to_json() for e in self.errors]}


VALID_REPORT = ValidationReport(errors=())


class AuditorUnavailable(RuntimeError):
    """A remote auditor is configured but cannot be reached."""


def _structural_errors(plan: Plan) -> list[ValidationError]:
    errors: list[ValidationError] = []
    for sq in plan.subquestions:
        i = sq.index
        if sq.executed:
            continue
        if sq.question is None:
            errors.append(ValidationError(ErrorCode.MISSING_FIELD, f"node {i}: required field 'question' is missing", i))
        elif not sq.question.strip():
            errors.append(ValidationError(ErrorCode.BAD_QUESTION, f"node {i}: question is empty", i))
        if sq.tool is None:
            if sq.tool_text is None:
                errors.append(ValidationError(ErrorCode.MISSING_FIELD, f"node {i}: required field 'tool' is missing", i))
            else:
                known = ", ".join(sorted(TOOL_ALIASES))
                errors.append(ValidationError(ErrorCode.BAD_TOOL, f"node {i}: tool {sq.tool_text!r} is not one of {known}", i))
        if sq.label is None:
            errors.append(ValidationError(ErrorCode.MISSING_FIELD, f"node {i}: required field 'label' is missing", i))
        elif sq.label != f"$var_{i}":
            errors.append(ValidationError(ErrorCode.BAD_LABEL, f"node {i}: label {sq.label!r} must be '$var_{i}'", i))
        if sq.should_expose_answer is None:
            errors.append(ValidationError(ErrorCode.MISSING_FIELD, f"node {i}: required field 'should_expose_answer' is missing", i))
        elif not isinstance(sq.should_expose_answer, bool):
            errors.append(
                ValidationError(
                    ErrorCode.MISSING_FIELD,
                    f"node {i}: should_expose_answer must be a JSON boolean, got {sq.should_expose_answer!r}",
                    i,
                )
            )
        if sq.exposes and not (sq.answer_description or "").strip():
            errors.append(ValidationError(ErrorCode.MISSING_ANSWER_DESCRIPTION, f"node {i}: exposed answer needs answer_description", i))
    return errors


def _hygiene_errors(plan: Plan, schema: GlobalSchema) -> list[ValidationError]:
    errors: list[ValidationError] = []
    n = len(plan.subquestions)
    schema_columns = schema.all_column_names() | schema.all_metadata_keys()
    partial: dict[int, frozenset[str]] = {
        sq.index: frozenset(sq.partial_result_columns or ()) for sq in plan.subquestions
    }
    for sq in plan.subquestions:
        if sq.executed:
            continue
        for ref in sq.var_refs():
            d, c = ref.target_index, ref.column
            if d < 1 or d > n:
                errors.append(
                    ValidationError(ErrorCode.UNKNOWN_VARIABLE, f"node {sq.index}: reference $var_{d} is out of range 1..{n}", sq.index)
                )
            if c is not None and c not in schema_columns and c not in partial.get(d, frozenset()):
                errors.append(
                    ValidationError(ErrorCode.UNKNOWN_COLUMN, f"node {sq.index}: column {c!r} of $var_{d} is not in the schema", sq.index)
                )
    return errors


def validate_plan(plan: Plan, schema: GlobalSchema) -> ValidationReport:
    """Run every validation phase and accumulate all findings.

    Nodes whose status is executed are skipped by the structural and hygiene
    phases (they already ran under an earlier version of the plan); their
    recorded ``partial_result_columns`` still satisfy column references.
    """
    if not plan.subquestions:
        return ValidationReport(errors=(ValidationError(ErrorCode.EMPTY_PLAN, "plan has no subquestions"),))

    errors = _structural_errors(plan)
    if not any(sq.exposes for sq in plan.subquestions):
        errors.append(ValidationError(ErrorCode.NO_EXPOSED_ANSWER, "no subquestion has should_expose_answer=true"))
    errors.extend(_hygiene_errors(plan, schema))

    cycle = find_cycle(build_dependency_graph(plan))
    if cycle is not None:
        path = " -> ".join(f"$var_{i}" for i in cycle)
        errors.append(ValidationError(ErrorCode.CYCLIC_DEPENDENCY, f"dependency cycle: {path}"))

    return ValidationReport(errors=tuple(errors))


class Auditor(Protocol):
    """Semantic plan check. Implementations may call out to a model."""

    def audit(self, plan: Plan, query: str, schema: GlobalSchema) -> list[ValidationError]: ...


AGGREGATE_KEYWORDS = ("average", "sum", "count", "max", "min")


def _mentions(text: str, name: str) -> bool:
    """True when ``name`` (underscores also matched as spaces) occurs as a word."""
    low = text.lower()
    for form in {name.lower(), name.lower().replace("_", " ")}:
        if re.search(rf"(?<![a-z0-9_]){re.escape(form)}(?![a-z0-9_])", low):
            return True
    return False


class HeuristicAuditor:
    """Deterministic stand-in for a model-backed intent audit.

    Two keyword checks: every schema table/column name mentioned by the
    source query must surface in some subquestion, and aggregate keywords in
    the source query must appear in at least one structured subquestion.
    Word-boundary matching keeps this cheap; it is intentionally shallow.
    """

    def audit(self, plan: Plan, query: str, schema: GlobalSchema) -> list[ValidationError]:
        findings: list[ValidationError] = []
        questions = [sq.question or "" for sq in plan.subquestions]

        names = {t.name for t in schema.tables}
        for t in schema.tables:
            names.update(c.name for c in t.columns)
        for name in sorted(names):
            if _mentions(query, name) and not any(_mentions(q, name) for q in questions):
                findings.append(
                    ValidationError(ErrorCode.SEMANTIC_DRIFT, f"query mentions schema term {name!r} but no subquestion does")
                )

        structured_questions = [
            sq.question or "" for sq in plan.subquestions if sq.tool is Tool.STRUCTURED
        ]
        for kw in AGGREGATE_KEYWORDS:
            if _mentions(query, kw) and not any(_mentions(q, kw) for q in structured_questions):
                findings.append(
                    ValidationError(ErrorCode.SEMANTIC_DRIFT, f"aggregate {kw!r} in query is missing from structured subquestions")
                )
        return findings


def audit_plan(plan: Plan, query: str, schema: GlobalSchema, auditor: Auditor | None) -> ValidationReport:
    """Delegate the semantic check to ``auditor``; None means no auditing."""
    if auditor is None:
        return VALID_REPORT
    return ValidationReport(errors=tuple(auditor.audit(plan, query, schema)))
