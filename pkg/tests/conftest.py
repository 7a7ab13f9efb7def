from __future__ import annotations

from pathlib import Path

import pytest

from adot.plan_ir import parse_plan
from adot.stores.ingest import build_store, load_documents, load_tables

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


def make_store(name: str):
    tables = load_tables(FIXTURES / name / "tables.json")
    documents = load_documents(FIXTURES / name / "docs.jsonl")
    store, _ = build_store(tables, documents)
    return store


def load_plan(name: str):
    return parse_plan((FIXTURES / name / "plan.json").read_text(encoding="utf-8"))


@pytest.fixture
def olympics_store():
    return make_store("olympics")


@pytest.fixture
def queensland_store():
    return make_store("queensland")


@pytest.fixture
def smoky_store():
    return make_store("smoky_mountains")


@pytest.fixture
def invoices_store():
    return make_store("invoices")


@pytest.fixture
def olympics_plan():
    return load_plan("olympics")


@pytest.fixture
def queensland_plan():
    return load_plan("queensland")


@pytest.fixture
def smoky_plan():
    return load_plan("smoky_mountains")


@pytest.fixture
def fixtures_dir():
    return FIXTURES
