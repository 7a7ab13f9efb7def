"""Build a hybrid store from raw files, then query both sides of it.

The store couples a small relational table with a chunked, embedded
document collection; a document_id cross-link ties the two together.
"""

import tempfile
from pathlib import Path

from adot import StructuredQuery, exec_structured, ingest, load_store
from adot.stores.relational import Aggregate, Filter

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures" / "queensland"

with tempfile.TemporaryDirectory() as tmp:
    store_dir = Path(tmp) / "store"
    report = ingest(FIXTURES / "tables.json", FIXTURES / "docs.jsonl", store_dir)
    print("ingest report:", report.to_json())

    store = load_store(store_dir)
    print("\nschema signature:", store.signature[:16], "...")

    print("\n-- structured side: equality filter --")
    query = StructuredQuery(
        table="sport_in_queensland",
        select=("club", "venue"),
        filters=(Filter("league", "=", "Motorsport"),),
    )
    result = exec_structured(store, query)
    for row, refs in zip(result.rows, result.provenance):
        print(f"  {row}   <- {refs[0].table} row {refs[0].row_id}")

    print("\n-- structured side: aggregate --")
    agg = StructuredQuery(table="sport_in_queensland", aggregate=Aggregate("count", None))
    print("  clubs on record:", exec_structured(store, agg).rows[0][0])

    print("\n-- vector side: hybrid dense+sparse retrieval --")
    hits = store.index.search("Who won the Bathurst 12 Hour?", k=2)
    for hit in hits:
        print(f"  doc {hit.chunk.document_id}  fused={hit.fused_score:.3f}  {hit.chunk.text[:60]}...")

    print("\n-- cross-link hop: chunk -> rows --")
    top = hits[0].chunk
    for table, row_id in store.rows_for_document(top.document_id):
        print(f"  document {top.document_id} backs {table} row {row_id}:", store.tables[table].rows[row_id])
