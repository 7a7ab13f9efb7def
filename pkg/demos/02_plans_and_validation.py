"""Parse a DAG plan, inspect its dependency structure, and validate it.

The validator accumulates every finding instead of stopping at the first
one, which is what makes downstream repair possible.
"""

import json
from pathlib import Path

from adot import build_dependency_graph, parse_plan, serialize_plan, validate_plan
from adot.stores.ingest import build_store, load_documents, load_tables

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures" / "queensland"

store, _ = build_store(load_tables(FIXTURES / "tables.json"), load_documents(FIXTURES / "docs.jsonl"))
plan = parse_plan((FIXTURES / "plan.json").read_text())

print("-- the plan --")
print(serialize_plan(plan))

print("\n-- dependency graph (node -> referenced nodes) --")
for node, deps in build_dependency_graph(plan).items():
    print(f"  {node} -> {sorted(deps) or 'nothing'}")

print("\n-- validation of the clean plan --")
report = validate_plan(plan, store.schema)
print("  is_valid:", report.is_valid)

print("\n-- now break it four different ways at once --")
doc = json.loads(serialize_plan(plan))
doc["subquestions"][0]["label"] = "$v1"                 # malformed label
doc["subquestions"][0]["tool"] = "warehouse"            # unknown backend
doc["subquestions"][1]["question"] += " and $var_9"     # dangling reference
doc["subquestions"][1]["should_expose_answer"] = False  # nothing exposed
broken = parse_plan(json.dumps(doc))
for error in validate_plan(broken, store.schema).errors:
    print(f"  [{error.code.value}] {error.detail}")
