from __future__ import annotations

import json

import pytest

from adot.cli import main
from adot.stores.store import load_store
from conftest import FIXTURES


@pytest.fixture
def store_dir(tmp_path):
    out = tmp_path / "store"
    code = main([
        "ingest",
        "--tables", str(FIXTURES / "olympics" / "tables.json"),
        "--docs", str(FIXTURES / "olympics" / "docs.jsonl"),
        "--out", str(out),
    ])
    assert code == 0
    return out


def test_ingest_reports_counts(store_dir, capsys):
    assert (store_dir / "schema.json").exists()
    assert (store_dir / "chunks.jsonl").exists()
    store = load_store(store_dir)
    assert len(store.index.chunks) == 4


def test_validate_exit_codes(store_dir, tmp_path, capsys):
    schema_file = store_dir / "schema.json"
    plan_file = FIXTURES / "olympics" / "plan.json"
    assert main(["validate", "--plan", str(plan_file), "--schema", str(schema_file)]) == 0
    out = capsys.readouterr().out
    assert "valid" in out

    broken = tmp_path / "broken.json"
    doc = json.loads(plan_file.read_text())
    doc["subquestions"][0]["label"] = "$v1"
    broken.write_text(json.dumps(doc))
    assert main(["validate", "--plan", str(broken), "--schema", str(schema_file), "--json"]) == 2
    report = json.loads(capsys.readouterr().out)
    assert report["is_valid"] is False
    assert report["errors"][0]["code"] == "BadLabel"


def test_run_executes_plan(store_dir, tmp_path, capsys):
    lineage = tmp_path / "lineage.jsonl"
    code = main([
        "run",
        "--plan", str(FIXTURES / "olympics" / "plan.json"),
        "--store", str(store_dir),
        "--lineage", str(lineage),
        "--stream",
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "Birth year of the athlete: 1920" in out
    events = [json.loads(line) for line in out.strip().splitlines() if line.startswith("{")]
    assert any(e["kind"] == "PartialAnswer" for e in events)
    assert lineage.exists()

    code = main(["trace", "--lineage", str(lineage), "--label", "$var_3"])
    closure = json.loads(capsys.readouterr().out)
    assert code == 0
    assert len(closure) == 3


def test_run_execution_failure_exit_code(tmp_path, capsys):
    out = tmp_path / "smoky_store"
    main([
        "ingest",
        "--tables", str(FIXTURES / "smoky_mountains" / "tables.json"),
        "--docs", str(FIXTURES / "smoky_mountains" / "docs.jsonl"),
        "--out", str(out),
    ])
    capsys.readouterr()
    code = main([
        "run",
        "--plan", str(FIXTURES / "smoky_mountains" / "plan.json"),
        "--store", str(out),
    ])
    assert code == 3


def test_run_invalid_plan_exit_code(store_dir, tmp_path, capsys):
    doc = json.loads((FIXTURES / "olympics" / "plan.json").read_text())
    for node in doc["subquestions"]:
        node["should_expose_answer"] = False
        node.pop("answer_description", None)
    broken = tmp_path / "noexpose.json"
    broken.write_text(json.dumps(doc))
    code = main(["run", "--plan", str(broken), "--store", str(store_dir), "--dataops", "off"])
    assert code == 2


def test_ask_with_cache_file_round_trip(store_dir, tmp_path, capsys):
    cache_file = tmp_path / "cache.json"
    question = "What year was the athlete born in the event that had 70 competitors from 39 countries, with 64 finishers?"
    args = [
        "ask",
        "--question", question,
        "--store", str(store_dir),
        "--planner", f"scripted:{FIXTURES / 'olympics' / 'script.json'}",
        "--cache-file", str(cache_file),
    ]
    assert main(args) == 0
    assert "1920" in capsys.readouterr().out

    assert main(args) == 0
    assert "1920" in capsys.readouterr().out

    assert main(["cache", "stats", "--cache-file", str(cache_file)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["entries"] == 1
    assert stats["insertions"] >= 1

    assert main(["cache", "clear", "--cache-file", str(cache_file)]) == 0
    capsys.readouterr()
    assert main(["cache", "stats", "--cache-file", str(cache_file)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["entries"] == 0


def test_ask_with_config_file_and_env_override(store_dir, tmp_path, capsys, monkeypatch):
    config_file = tmp_path / "config.json"
    config_file.write_text(json.dumps({"top_k": 3, "dataops": True}))
    monkeypatch.setenv("ADOT_MAX_PARALLEL", "2")
    question = "What year was the athlete born in the event that had 70 competitors from 39 countries, with 64 finishers?"
    code = main([
        "ask",
        "--question", question,
        "--store", str(store_dir),
        "--planner", f"scripted:{FIXTURES / 'olympics' / 'script.json'}",
        "--config", str(config_file),
        "--no-cache",
    ])
    assert code == 0
    assert "1920" in capsys.readouterr().out


def test_ask_no_plan_exit_code(store_dir, capsys):
    code = main([
        "ask",
        "--question", "completely unknown question?",
        "--store", str(store_dir),
        "--planner", f"scripted:{FIXTURES / 'olympics' / 'script.json'}",
    ])
    assert code == 4


def test_ask_sequential_flag(store_dir, capsys):
    question = "What year was the athlete born in the event that had 70 competitors from 39 countries, with 64 finishers?"
    code = main([
        "ask",
        "--question", question,
        "--store", str(store_dir),
        "--planner", f"scripted:{FIXTURES / 'olympics' / 'script.json'}",
        "--sequential",
        "--no-cache",
    ])
    assert code == 0
