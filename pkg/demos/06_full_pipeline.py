"""One question through the whole engine, twice.

First pass: cache miss, planner consulted, plan validated, executed in
waves, answer synthesized, plan cached. Second pass: exact cache hit, zero
planner calls, identical answer, and validation still runs.
"""

from pathlib import Path

from adot import Pipeline, PipelineConfig, ScriptedPlanner
from adot.stores.ingest import build_store, load_documents, load_tables

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures" / "olympics"
QUESTION = (
    "What year was the athlete born in the event that had 70 competitors from 39 countries, with 64 finishers?"
)

store, _ = build_store(load_tables(FIXTURES / "tables.json"), load_documents(FIXTURES / "docs.jsonl"))
pipeline = Pipeline(
    store=store,
    config=PipelineConfig(),
    planner=ScriptedPlanner.from_file(FIXTURES / "script.json"),
)

print("question:", QUESTION)
for attempt in (1, 2):
    result = pipeline.answer_question(QUESTION)
    print(f"\n-- attempt {attempt} --")
    print("  status:        ", result.status)
    print("  cache strategy:", result.cache_strategy or "miss (planner used)")
    print("  planner calls: ", pipeline.planner_calls)
    print("  validations:   ", pipeline.validation_calls)
    print("  answer:        ", result.final_answer)

print("\ncache stats:", pipeline.cache.stats.to_json())
