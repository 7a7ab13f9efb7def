from __future__ import annotations

import json
import time
from random import Random

import pytest

from adot.adapters import AdapterOutcome, ResolvedSubQuery
from adot.executor import (
    Binding,
    CycleDetectedError,
    EventKind,
    ExecutorConfig,
    FeedbackClass,
    MissingKeyError,
    NoExposedResultsError,
    UnboundVariableError,
    execute_plan,
    resolve_question,
    slim_binding,
    synthesize_answer,
    topological_waves,
)
from adot.plan_ir import NodeStatus, Tool
from adot.stores.relational import ResultSet, RowRef
from plangen import parse_doc, random_valid_plan_doc, simulated_adapters

DIAMOND_DOC = {
    "subquestions": [
        {"question": "root?", "tool": "sql", "label": "$var_1", "should_expose_answer": False},
        {"question": "left uses $var_1.val?", "tool": "sql", "label": "$var_2", "should_expose_answer": False},
        {"question": "right uses $var_1.val?", "tool": "vector", "label": "$var_3", "should_expose_answer": False},
        {"question": "join $var_2.val and $var_3.val?", "tool": "sql", "label": "$var_4",
         "should_expose_answer": True, "answer_description": "joined"},
    ]
}


def rs(rows, columns=("val", "document_id"), table="t"):
    return ResultSet(
        columns=columns,
        rows=tuple(tuple(r) for r in rows),
        provenance=tuple((RowRef(table, i),) for i in range(len(rows))),
    )


# --- topological waves ---------------------------------------------------------


def test_waves_chain(olympics_plan):
    assert topological_waves(olympics_plan) == [[1], [2], [3]]


def test_waves_diamond():
    assert topological_waves(parse_doc(DIAMOND_DOC)) == [[1], [2, 3], [4]]


def test_waves_independent_nodes():
    doc = {"subquestions": [
        {"question": "a?", "tool": "sql", "label": "$var_1", "should_expose_answer": True, "answer_description": "d"},
        {"question": "b?", "tool": "sql", "label": "$var_2", "should_expose_answer": False},
        {"question": "c?", "tool": "sql", "label": "$var_3", "should_expose_answer": False},
    ]}
    assert topological_waves(parse_doc(doc)) == [[1, 2, 3]]


def test_waves_exclude_executed_nodes():
    doc = {"subquestions": [
        {"question": "a?", "tool": "sql", "label": "$var_1", "should_expose_answer": False, "status": "executed",
         "partial_result_columns": ["val"]},
        {"question": "b uses $var_1.val?", "tool": "sql", "label": "$var_2", "should_expose_answer": True,
         "answer_description": "d"},
    ]}
    assert topological_waves(parse_doc(doc)) == [[2]]


def test_waves_cycle_defensive_error():
    doc = {"subquestions": [
        {"question": "a uses $var_2?", "tool": "sql", "label": "$var_1", "should_expose_answer": True, "answer_description": "d"},
        {"question": "b uses $var_1?", "tool": "sql", "label": "$var_2", "should_expose_answer": False},
    ]}
    with pytest.raises(CycleDetectedError):
        topological_waves(parse_doc(doc))


# --- slimming -------------------------------------------------------------------


def test_slim_dedup_and_projection():
    result = rs([(3, "a"), (7, "b"), (3, "c")], columns=("document_id", "body"))
    view = slim_binding(result, {"document_id"})
    assert view == {"document_id": (3, 7)}


def test_slim_missing_key():
    with pytest.raises(MissingKeyError):
        slim_binding(rs([(1, 2)]), {"nope"})


def test_slim_empty_required_keys_rejected():
    with pytest.raises(ValueError):
        slim_binding(rs([(1, 2)]), set())


def test_slim_large_result_payload_reduction():
    rows = [(f"row-{i}", "x" * 40, i % 12) for i in range(100_000)]
    result = ResultSet(
        columns=("name", "body_text", "document_id"),
        rows=tuple(rows),
        provenance=tuple((RowRef("big", i),) for i in range(len(rows))),
    )
    view = slim_binding(result, {"document_id"})
    assert len(view["document_id"]) == 12
    slim_size = len(json.dumps({k: list(v) for k, v in view.items()}))
    full_size = len(json.dumps({"columns": list(result.columns), "rows": [list(r) for r in result.rows]}))
    assert slim_size < 0.05 * full_size


# --- resolve_question -----------------------------------------------------------


def binding(label, view, answer=None, produced_by=1):
    return Binding(label=label, full_result=None, slim_view=view, produced_by=produced_by, answer_value=answer)


def test_resolve_inline_single_value():
    doc = {"subquestions": [
        {"question": "x?", "tool": "sql", "label": "$var_1", "should_expose_answer": False},
        {"question": "What is the venue of the club with document_id in $var_1.document_id?",
         "tool": "sql", "label": "$var_2", "should_expose_answer": True, "answer_description": "d"},
    ]}
    plan = parse_doc(doc)
    rq = resolve_question(plan.node(2), {"$var_1": binding("$var_1", {"document_id": (7,)})})
    assert rq.question_resolved == "What is the venue of the club with document_id in 7?"
    assert rq.bindings_in == {"$var_1": {"document_id": [7]}}


def test_resolve_quotes_text_values():
    doc = {"subquestions": [
        {"question": "x?", "tool": "sql", "label": "$var_1", "should_expose_answer": False},
        {"question": "lookup names in $var_1.name?", "tool": "sql", "label": "$var_2",
         "should_expose_answer": True, "answer_description": "d"},
    ]}
    plan = parse_doc(doc)
    rq = resolve_question(plan.node(2), {"$var_1": binding("$var_1", {"name": ("ann", "bo")})})
    assert rq.question_resolved == "lookup names in 'ann', 'bo'?"


def test_resolve_without_refs_is_unchanged(queensland_plan):
    rq = resolve_question(queensland_plan.node(1), {})
    assert rq.question_resolved == queensland_plan.node(1).question


def test_resolve_bare_ref_uses_answer_value():
    doc = {"subquestions": [
        {"question": "x?", "tool": "sql", "label": "$var_1", "should_expose_answer": False},
        {"question": "refine $var_1 please?", "tool": "vector", "label": "$var_2",
         "should_expose_answer": True, "answer_description": "d"},
    ]}
    plan = parse_doc(doc)
    rq = resolve_question(plan.node(2), {"$var_1": binding("$var_1", {"val": (5,)}, answer="the answer")})
    assert rq.question_resolved == "refine the answer please?"


def test_resolve_unbound_variable():
    doc = {"subquestions": [
        {"question": "uses $var_1.val?", "tool": "sql", "label": "$var_1", "should_expose_answer": True, "answer_description": "d"},
    ]}
    with pytest.raises(UnboundVariableError):
        resolve_question(parse_doc(doc).node(1), {})


def test_resolve_symbolic_beyond_threshold_and_adapter_equivalence(invoices_store):
    from adot.adapters import run_structured_adapter

    values = tuple(range(1, 151))  # 150 distinct ids, inline limit is 100
    doc = {"subquestions": [
        {"question": "x?", "tool": "sql", "label": "$var_1", "should_expose_answer": False},
        {"question": "What is the receiver of the invoice with invoice_id in $var_1.invoice_id?",
         "tool": "sql", "label": "$var_2", "should_expose_answer": True, "answer_description": "d"},
    ]}
    plan = parse_doc(doc)
    big = resolve_question(plan.node(2), {"$var_1": binding("$var_1", {"invoice_id": values})})
    assert "$var_1.invoice_id" in big.question_resolved
    assert big.bindings_in["$var_1"]["invoice_id"] == list(values)

    small_values = (1, 2, 3, 4)
    small = resolve_question(plan.node(2), {"$var_1": binding("$var_1", {"invoice_id": small_values})})
    assert "in 1, 2, 3, 4?" in small.question_resolved

    big_outcome = run_structured_adapter(big, invoices_store)
    small_outcome = run_structured_adapter(small, invoices_store)
    assert set(big_outcome.result.rows) == set(small_outcome.result.rows)


def test_resolve_empty_value_list_stays_symbolic():
    doc = {"subquestions": [
        {"question": "x?", "tool": "sql", "label": "$var_1", "should_expose_answer": False},
        {"question": "filter on $var_1.document_id?", "tool": "sql", "label": "$var_2",
         "should_expose_answer": True, "answer_description": "d"},
    ]}
    plan = parse_doc(doc)
    rq = resolve_question(plan.node(2), {"$var_1": binding("$var_1", {"document_id": ()})})
    assert "$var_1.document_id" in rq.question_resolved
    assert rq.bindings_in["$var_1"]["document_id"] == []


# --- execute_plan ----------------------------------------------------------------


def test_execute_golden_path(olympics_plan, olympics_store):
    result = execute_plan(olympics_plan, olympics_store)
    assert result.ok
    assert result.final_answer == "Birth year of the athlete: 1920"
    assert [sq.status for sq in result.plan_after.subquestions] == [NodeStatus.EXECUTED] * 3
    assert result.plan_after.node(2).partial_result_columns == ("document_id",)


def test_execute_single_failing_node_yields_feedback():
    from conftest import make_store

    doc = {"subquestions": [
        {"question": "please dance", "tool": "sql", "label": "$var_1",
         "should_expose_answer": True, "answer_description": "d"},
    ]}
    plan = parse_doc(doc)
    store = make_store("queensland")
    result = execute_plan(plan, store)
    assert not result.ok
    assert result.answers == ()
    assert result.final_answer is None
    assert result.feedback[0].node_index == 1
    assert result.feedback[0].error_class is FeedbackClass.TRANSLATION_FAILED


def test_execute_failure_skips_dependents_and_keeps_siblings(smoky_store, smoky_plan):
    result = execute_plan(smoky_plan, smoky_store)
    assert result.skipped == (2,)
    assert result.feedback[0].error_class is FeedbackClass.NO_MATCH
    statuses = {sq.index: sq.status for sq in result.plan_after.subquestions}
    assert statuses[1] is NodeStatus.FAILED
    assert statuses[2] is NodeStatus.PENDING


def test_failure_isolation_sibling_branch_unaffected():
    doc = {"subquestions": [
        {"question": "left root?", "tool": "sql", "label": "$var_1", "should_expose_answer": False},
        {"question": "right root?", "tool": "sql", "label": "$var_2", "should_expose_answer": False},
        {"question": "left child uses $var_1.val?", "tool": "sql", "label": "$var_3",
         "should_expose_answer": True, "answer_description": "left"},
        {"question": "right child uses $var_2.val?", "tool": "sql", "label": "$var_4",
         "should_expose_answer": True, "answer_description": "right"},
    ]}
    plan = parse_doc(doc)
    clean = execute_plan(plan, adapters=simulated_adapters(), config=ExecutorConfig())
    broken = execute_plan(plan, adapters=simulated_adapters(fail_nodes=frozenset({1})), config=ExecutorConfig())
    assert not broken.ok and broken.skipped == (3,)
    assert broken.bindings["$var_4"].answer_value == clean.bindings["$var_4"].answer_value
    assert ("right", clean.bindings["$var_4"].answer_value) in broken.answers


def test_execute_timeout_feedback():
    doc = {"subquestions": [
        {"question": "slow?", "tool": "sql", "label": "$var_1", "should_expose_answer": True, "answer_description": "d"},
    ]}
    plan = parse_doc(doc)
    result = execute_plan(
        plan,
        adapters=simulated_adapters(delay=0.5),
        config=ExecutorConfig(node_timeout=0.05),
    )
    assert result.feedback[0].error_class is FeedbackClass.TIMEOUT


def test_diamond_parallel_timing():
    plan = parse_doc(DIAMOND_DOC)
    adapters = {
        Tool.STRUCTURED: None,
        Tool.VECTOR: None,
    }

    def slow_for_wave2(rq: ResolvedSubQuery) -> AdapterOutcome:
        if rq.node_index in (2, 3):
            time.sleep(0.1)
        result = rs([(rq.node_index, rq.node_index)])
        return AdapterOutcome(result=result, answer_value=rq.node_index)

    adapters = {Tool.STRUCTURED: slow_for_wave2, Tool.VECTOR: slow_for_wave2}

    start = time.perf_counter()
    execute_plan(plan, adapters=adapters, config=ExecutorConfig(max_parallel=2))
    parallel_wall = time.perf_counter() - start

    start = time.perf_counter()
    execute_plan(plan, adapters=adapters, config=ExecutorConfig(max_parallel=1))
    sequential_wall = time.perf_counter() - start

    assert parallel_wall < 0.160
    assert sequential_wall >= 0.200


def _normalized_lineage(result):
    records = []
    for rec in sorted(
        (r for r in result.lineage.records if r.kind == "node"), key=lambda r: (r.node_index or 0, r.seq)
    ):
        records.append(
            (
                rec.node_index,
                rec.label,
                rec.tool,
                rec.status,
                rec.question_resolved,
                json.dumps(rec.output_summary, sort_keys=True, default=str),
                tuple(rec.provenance_refs),
                rec.input_labels,
                rec.error_class,
            )
        )
    return records


def test_parallel_equals_sequential_on_random_dags():
    rng = Random(424242)
    for _ in range(200):
        doc = random_valid_plan_doc(rng, max_nodes=8)
        plan = parse_doc(doc)
        runs = []
        for max_parallel in (1, 4):
            result = execute_plan(
                plan,
                adapters=simulated_adapters(),
                config=ExecutorConfig(max_parallel=max_parallel),
            )
            assert result.ok
            runs.append(result)
        a, b = runs
        assert a.final_answer == b.final_answer
        assert {l: (dict(x.slim_view), x.answer_value) for l, x in a.bindings.items()} == {
            l: (dict(x.slim_view), x.answer_value) for l, x in b.bindings.items()
        }
        assert _normalized_lineage(a) == _normalized_lineage(b)
        # single assignment: one binding per node, all labels distinct
        assert len(a.bindings) == len(plan.subquestions)


def test_slimming_on_off_identical_answers(olympics_store, olympics_plan, queensland_store, queensland_plan):
    for store, plan in ((olympics_store, olympics_plan), (queensland_store, queensland_plan)):
        on = execute_plan(plan, store, config=ExecutorConfig(slimming=True))
        off = execute_plan(plan, store, config=ExecutorConfig(slimming=False))
        assert on.final_answer == off.final_answer
        assert on.answers == off.answers


def test_event_ordering_properties():
    rng = Random(31)
    for _ in range(50):
        doc = random_valid_plan_doc(rng, max_nodes=6)
        plan = parse_doc(doc)
        result = execute_plan(plan, adapters=simulated_adapters(), config=ExecutorConfig(max_parallel=3))
        kinds = [e.kind for e in result.events]
        assert kinds[-1] is EventKind.PLAN_COMPLETED
        completed_pos = {
            e.node_index: i for i, e in enumerate(result.events) if e.kind is EventKind.NODE_COMPLETED
        }
        partial_pos = [i for i, e in enumerate(result.events) if e.kind is EventKind.PARTIAL_ANSWER]
        assert all(p < len(result.events) - 1 for p in partial_pos)
        from adot.plan_ir import build_dependency_graph

        graph = build_dependency_graph(plan)
        for u, deps in graph.items():
            for v in deps:
                assert completed_pos[v] < completed_pos[u]


def test_partial_answer_streamed_before_later_waves(olympics_store, fixtures_dir):
    doc = json.loads((fixtures_dir / "olympics" / "plan.json").read_text())
    doc["subquestions"][0]["should_expose_answer"] = True
    doc["subquestions"][0]["answer_description"] = "Event document id"
    plan = parse_doc(doc)
    seen = []
    execute_plan(plan, olympics_store, on_event=lambda e: seen.append(e))
    first_partial = next(i for i, e in enumerate(seen) if e.kind is EventKind.PARTIAL_ANSWER)
    later_completion = [
        i for i, e in enumerate(seen) if e.kind is EventKind.NODE_COMPLETED and e.node_index in (2, 3)
    ]
    assert first_partial < min(later_completion)


def test_resume_with_missing_binding_yields_feedback():
    doc = {"subquestions": [
        {"question": "a?", "tool": "sql", "label": "$var_1", "should_expose_answer": False,
         "status": "executed", "partial_result_columns": ["val"]},
        {"question": "b uses $var_1.val?", "tool": "sql", "label": "$var_2",
         "should_expose_answer": True, "answer_description": "d"},
    ]}
    result = execute_plan(parse_doc(doc), adapters=simulated_adapters(), initial_bindings={})
    assert result.feedback[0].error_class is FeedbackClass.UNKNOWN_VARIABLE_AT_RUNTIME


def test_default_parallelism_caps_wide_waves():
    doc = {"subquestions": [
        {"question": f"op {i}?", "tool": "sql", "label": f"$var_{i}",
         "should_expose_answer": i == 1, **({"answer_description": "d"} if i == 1 else {})}
        for i in range(1, 11)
    ]}
    result = execute_plan(parse_doc(doc), adapters=simulated_adapters())
    assert result.ok and len(result.bindings) == 10


def test_resume_with_initial_bindings(olympics_store, olympics_plan):
    first = execute_plan(olympics_plan, olympics_store)
    plan_after = first.plan_after
    # mark node 3 pending again and re-run only it, reusing bindings of 1..2
    import dataclasses

    node3 = dataclasses.replace(plan_after.node(3), status=NodeStatus.PENDING, partial_result_columns=None)
    resumed_plan = plan_after.with_node(node3)
    bindings = {k: v for k, v in first.bindings.items() if k != "$var_3"}
    second = execute_plan(resumed_plan, olympics_store, initial_bindings=bindings)
    assert topological_waves(resumed_plan) == [[3]]
    assert second.final_answer == first.final_answer


def test_multi_chunk_document_resolves_to_the_right_chunk():
    from adot.stores.ingest import build_store
    from adot.stores.relational import Table
    from adot.stores.schema import Column, TableSchema

    long_text = (
        "The harbor festival committee met through the spring to plan logistics. " * 8
        + "The regatta trophy was awarded to the Kestrel sailing crew after a tight final. "
        + "Afterwards the committee reviewed vendor feedback for the closing ceremony. " * 6
    )
    tables = [
        Table(
            schema=TableSchema("races", (Column("document_id", "int"), Column("winner", "text"))),
            rows=[(31, "Kestrel")],
        )
    ]
    store, report = build_store(tables, [(31, long_text)])
    assert report.chunks >= 2
    doc = {"subquestions": [
        {"question": "Find the document_id of the regatta trophy awarded to the sailing crew?",
         "tool": "milvus", "label": "$var_1", "should_expose_answer": False},
        {"question": "What is the winner of the race with document_id in $var_1.document_id?",
         "tool": "iceberg", "label": "$var_2", "should_expose_answer": True,
         "answer_description": "Winner of the regatta"},
    ]}
    result = execute_plan(parse_doc(doc), store)
    assert result.final_answer == "Winner of the regatta: Kestrel"
    vec_record = next(r for r in result.lineage.records if r.kind == "node" and r.tool == "milvus")
    # provenance names the specific chunk holding the sentence, not just the doc
    assert [r.to_json() for r in vec_record.provenance_refs] == [{"document_id": 31, "chunk_id": 1}]


def test_group_by_escape_hatch_through_a_plan(invoices_store):
    doc = {"subquestions": [
        {"question": "run `select state, avg(total_amount) from invoices group by state`",
         "tool": "iceberg", "label": "$var_1", "should_expose_answer": True,
         "answer_description": "Average amount by state"},
    ]}
    result = execute_plan(parse_doc(doc), invoices_store)
    assert result.ok
    assert "texas" in result.final_answer and "160.25" in result.final_answer


# --- synthesize -------------------------------------------------------------------


def test_synthesize_single_line():
    text = synthesize_answer([("Venue of the club that won the Bathurst 12 Hour", "Willowbank")])
    assert text == "Venue of the club that won the Bathurst 12 Hour: Willowbank"


def test_synthesize_dedups_identical_values():
    text = synthesize_answer([("first", "42"), ("second", "42")])
    assert text == "first: 42"


def test_synthesize_no_exposed_raises():
    with pytest.raises(NoExposedResultsError):
        synthesize_answer([])
