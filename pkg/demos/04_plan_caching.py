"""The three cache strategies and LRU eviction, end to end.

Exact hits match normalized text; template hits align tokens with typed
slots and instantiate the stored skeleton; semantic hits embed the query
and accept the best stored neighbor above the similarity threshold. A hit
skips planning, never validation.
"""

from adot import Context, PlanCache, build_template, parse_plan

CTX = Context(role="analyst")
SIG = "demo-schema-signature"

plan = parse_plan(
    """{"subquestions": [{
        "question": "What is the average of total_amount where state = 'texas'?",
        "tool": "iceberg", "label": "$var_1",
        "should_expose_answer": true, "answer_description": "Average total amount"}]}"""
)

cache = PlanCache(capacity=2, tau=0.85)

print("-- exact --")
cache.insert("Give me the average total amount for invoice receivers from Texas?", SIG, CTX, plan)
hit = cache.lookup("  give me the AVERAGE total amount for invoice receivers from texas ", SIG, CTX)
print("  strategy:", hit.strategy)

print("\n-- template --")
template_text, skeleton = build_template(
    "Give me the average total amount for invoice receivers from Texas",
    plan,
    [("state", "texas", "identifier")],
)
print("  stored template:", template_text)
cache.insert_template(template_text, SIG, CTX, skeleton)
hit = cache.lookup("Give me the average total amount for invoice receivers from Ohio", SIG, CTX)
print("  strategy:", hit.strategy)
print("  instantiated node question:", hit.plan.subquestions[0].question)

print("\n-- semantic --")
hit = cache.lookup("average total amount for receivers from texas give me the invoice", SIG, CTX)
print("  strategy:", hit.strategy if hit else "miss")

print("\n-- LRU eviction (capacity 2) --")
cache.insert("an entirely different question about payment terms", SIG, CTX, plan)
print("  entries now:", len(cache))
print("  stats:", cache.stats.to_json())
