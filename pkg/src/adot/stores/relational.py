"""In-memory relational store and its query mini-language.

Supported surface: column projection, equality/range/IN filters, one
single-key equi-join, one aggregate of {count, sum, avg, min, max} with an
optional group-by. Every output row carries provenance back to the source
row ids. This is deliberately not a SQL engine.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Mapping

from .schema import TableSchema


class StoreQueryError(Exception):
    """Base class for structured-query failures."""


class UnknownTableError(StoreQueryError):
    pass


class UnknownColumnError(StoreQueryError):
    pass


class TypeMismatchError(StoreQueryError):
    pass


class MiniQuerySyntaxError(StoreQueryError):
    """The textual mini-language form could not be parsed."""


@dataclass(frozen=True)
class RowRef:
    """Provenance pointer to one table row."""

    table: str
    row_id: int

    def to_json(self) -> dict[str, Any]:
        return {"table": self.table, "row_id": self.row_id}


@dataclass(frozen=True)
class ChunkRef:
    """Provenance pointer to one document chunk."""

    document_id: int
    chunk_id: int

    def to_json(self) -> dict[str, Any]:
        return {"document_id": self.document_id, "chunk_id": self.chunk_id}


SourceRef = RowRef | ChunkRef


def ref_from_json(obj: Mapping[str, Any]) -> "RowRef | ChunkRef":
    if "table" in obj:
        return RowRef(table=obj["table"], row_id=int(obj["row_id"]))
    return ChunkRef(document_id=int(obj["document_id"]), chunk_id=int(obj["chunk_id"]))


_PYTHON_TYPES = {
    "int": (int,),
    "float": (int, float),
    "text": (str,),
    "bool": (bool,),
}


def _conforms(value: Any, col_type: str) -> bool:
    if value is None:
        return True
    if col_type == "int" and isinstance(value, bool):
        return False
    return isinstance(value, _PYTHON_TYPES[col_type])


@dataclass
class Table:
    """A typed table; row ids are stable list positions."""

    schema: TableSchema
    rows: list[tuple] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen_pk: set[Any] = set()
        pk_idx = (
            self.schema.column_names.index(self.schema.primary_key)
            if self.schema.primary_key
            else None
        )
        for rid, row in enumerate(self.rows):
            if len(row) != len(self.schema.columns):
                raise ValueError(f"table {self.schema.name!r} row {rid}: arity mismatch")
            for value, col in zip(row, self.schema.columns):
                if not _conforms(value, col.type):
                    raise TypeMismatchError(
                        f"table {self.schema.name!r} row {rid}: {col.name} expects {col.type}, got {value!r}"
                    )
            if pk_idx is not None:
                pk = row[pk_idx]
                if pk in seen_pk:
                    raise ValueError(f"table {self.schema.name!r}: duplicate primary key {pk!r}")
                seen_pk.add(pk)

    @property
    def name(self) -> str:
        return self.schema.name

    def column_index(self, name: str) -> int:
        try:
            return self.schema.column_names.index(name)
        except ValueError:
            raise UnknownColumnError(f"table {self.name!r} has no column {name!r}") from None


@dataclass(frozen=True)
class Filter:
    column: str
    op: str  # one of = != < <= > >= in
    value: Any  # scalar, or a sequence for `in`


@dataclass(frozen=True)
class Join:
    table: str
    left_column: str
    right_column: str


@dataclass(frozen=True)
class Aggregate:
    func: str  # count sum avg min max
    column: str | None = None  # None means count(*)


@dataclass(frozen=True)
class StructuredQuery:
    table: str
    select: tuple[str, ...] = ("*",)
    join: Join | None = None
    filters: tuple[Filter, ...] = ()
    aggregate: Aggregate | None = None
    group_by: tuple[str, ...] = ()


@dataclass(frozen=True)
class ResultSet:
    """Columns, typed rows, and one provenance entry per row."""

    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    provenance: tuple[tuple, ...]  # per row: tuple of RowRef/ChunkRef

    def __post_init__(self) -> None:
        if len(self.rows) != len(self.provenance):
            raise ValueError("every row needs a provenance entry")
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row arity must equal column count")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def is_empty(self) -> bool:
        return not self.rows

    def column_values(self, name: str) -> list:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]

    def distinct_values(self, name: str) -> list:
        seen: set = set()
        out = []
        for v in self.column_values(name):
            if v not in seen:
                seen.add(v)
                out.append(v)
        return out


EMPTY_RESULT = ResultSet(columns=(), rows=(), provenance=())


def _compare(op: str, cell: Any, value: Any, col_type: str, column: str) -> bool:
    if op == "in":
        if not isinstance(value, (list, tuple, set, frozenset)):
            raise TypeMismatchError(f"filter {column!r}: IN expects a value list, got {value!r}")
        for v in value:
            _check_comparable(cell, v, col_type, column)
        return cell is not None and cell in set(value)
    _check_comparable(cell, value, col_type, column)
    if cell is None:
        return False
    if op == "=":
        return cell == value
    if op == "!=":
        return cell != value
    if op == "<":
        return cell < value
    if op == "<=":
        return cell <= value
    if op == ">":
        return cell > value
    if op == ">=":
        return cell >= value
    raise MiniQuerySyntaxError(f"unknown operator {op!r}")


def _check_comparable(cell: Any, value: Any, col_type: str, column: str) -> None:
    if value is None:
        return
    if col_type in ("int", "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeMismatchError(f"filter {column!r}: numeric column compared with {value!r}")
    elif col_type == "text":
        if not isinstance(value, str):
            raise TypeMismatchError(f"filter {column!r}: text column compared with {value!r}")
    elif col_type == "bool":
        if not isinstance(value, bool):
            raise TypeMismatchError(f"filter {column!r}: bool column compared with {value!r}")


def _aggregate_value(func: str, values: list) -> Any:
    if func == "count":
        return len(values)
    if func == "sum":
        return sum(values)
    if func == "avg":
        return sum(values) / len(values)
    if func == "min":
        return min(values)
    if func == "max":
        return max(values)
    raise MiniQuerySyntaxError(f"unknown aggregate {func!r}")


def exec_structured(store: Any, query: StructuredQuery) -> ResultSet:
    """Execute a mini-language query against the store's tables.

    ``store`` is anything with a ``tables`` mapping (or a plain mapping of
    name -> Table). Aggregates over an empty filtered set return an empty
    ResultSet rather than 0/null so downstream stages see "no data"
    unambiguously.
    """
    tables: Mapping[str, Table] = getattr(store, "tables", store)
    base = tables.get(query.table)
    if base is None:
        raise UnknownTableError(f"unknown table {query.table!r}")

    # Working relation: column names, type map, rows with provenance.
    columns = list(base.schema.column_names)
    types = {c.name: c.type for c in base.schema.columns}
    working: list[tuple[tuple, tuple]] = [
        (row, (RowRef(base.name, rid),)) for rid, row in enumerate(base.rows)
    ]

    if query.join is not None:
        other = tables.get(query.join.table)
        if other is None:
            raise UnknownTableError(f"unknown table {query.join.table!r}")
        li = base.column_index(query.join.left_column)
        ri = other.column_index(query.join.right_column)
        by_key: dict[Any, list[tuple[int, tuple]]] = {}
        for rid, row in enumerate(other.rows):
            if row[ri] is not None:
                by_key.setdefault(row[ri], []).append((rid, row))
        for c in other.schema.columns:
            out_name = c.name if c.name not in columns else f"{other.name}.{c.name}"
            columns.append(out_name)
            types[out_name] = c.type
        joined: list[tuple[tuple, tuple]] = []
        for row, refs in working:
            for rid, orow in by_key.get(row[li], ()):  # inner join
                joined.append((row + orow, refs + (RowRef(other.name, rid),)))
        working = joined

    def col_idx(name: str) -> int:
        if name not in columns:
            raise UnknownColumnError(f"no column {name!r} in {query.table!r} query")
        return columns.index(name)

    for f in query.filters:
        idx = col_idx(f.column)
        ctype = types[f.column]
        working = [
            (row, refs) for row, refs in working if _compare(f.op, row[idx], f.value, ctype, f.column)
        ]

    if query.aggregate is None:
        if query.group_by:
            raise MiniQuerySyntaxError("group by requires an aggregate")
        if query.select == ("*",):
            sel = list(range(len(columns)))
            out_cols = tuple(columns)
        else:
            sel = [col_idx(c) for c in query.select]
            out_cols = tuple(query.select)
        rows = tuple(tuple(row[i] for i in sel) for row, _ in working)
        prov = tuple(refs for _, refs in working)
        return ResultSet(columns=out_cols, rows=rows, provenance=prov)

    agg = query.aggregate
    agg_label = f"{agg.func}({agg.column or '*'})"
    group_idx = [col_idx(c) for c in query.group_by]
    value_idx = col_idx(agg.column) if agg.column is not None else None

    groups: dict[tuple, tuple[list, list]] = {}
    order: list[tuple] = []
    for row, refs in working:
        key = tuple(row[i] for i in group_idx)
        if key not in groups:
            groups[key] = ([], [])
            order.append(key)
        values, reflist = groups[key]
        if value_idx is None:
            values.append(1)
        elif row[value_idx] is not None:
            values.append(row[value_idx])
        reflist.extend(refs)

    out_rows: list[tuple] = []
    out_prov: list[tuple] = []
    for key in order:
        values, refs = groups[key]
        if not values:
            continue  # aggregate over nothing yields no row
        out_rows.append(key + (_aggregate_value(agg.func, values),))
        out_prov.append(tuple(refs))
    return ResultSet(
        columns=tuple(query.group_by) + (agg_label,),
        rows=tuple(out_rows),
        provenance=tuple(out_prov),
    )


# --- textual mini-language -------------------------------------------------

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<num>-?\d+(?:\.\d+)?)
      | (?P<str>'(?:[^']*)')
      | (?P<op><=|>=|!=|=|<|>)
      | (?P<punct>[(),\[\]*])
      | (?P<word>[A-Za-z_][A-Za-z0-9_.$]*)
    )""",
    re.VERBOSE,
)

_AGG_FUNCS = ("count", "sum", "avg", "min", "max")


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip():
                raise MiniQuerySyntaxError(f"cannot tokenize {text[pos:]!r}")
            break
        tokens.append(m.group().strip())
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise MiniQuerySyntaxError("unexpected end of query")
        self.pos += 1
        return tok

    def expect(self, word: str) -> None:
        tok = self.next()
        if tok.lower() != word:
            raise MiniQuerySyntaxError(f"expected {word!r}, got {tok!r}")

    def parse_value(self) -> Any:
        tok = self.next()
        if tok.startswith("'"):
            return tok[1:-1]
        if tok.lower() == "true":
            return True
        if tok.lower() == "false":
            return False
        try:
            return float(tok) if "." in tok else int(tok)
        except ValueError:
            raise MiniQuerySyntaxError(f"expected a value, got {tok!r}") from None


def parse_mini_query(text: str) -> StructuredQuery:
    """Parse the textual mini-language.

    Grammar::

        select <item>[, <item>]* from <table>
          [join <table2> on <left_col> = <right_col>]
          [where <cond> [and <cond>]*]
          [group by <col>[, <col>]*]

    where an item is ``*``, a column, or ``agg(column|*)`` and a condition
    is ``col OP value`` or ``col in [v1, v2, ...]``.
    """
    p = _Parser(_tokenize(text))
    p.expect("select")

    select: list[str] = []
    aggregate: Aggregate | None = None
    while True:
        tok = p.next()
        if tok == "*":
            select.append("*")
        elif tok.lower() in _AGG_FUNCS and p.peek() == "(":
            p.expect("(")
            col = p.next()
            p.expect(")")
            if aggregate is not None:
                raise MiniQuerySyntaxError("only one aggregate per query")
            aggregate = Aggregate(func=tok.lower(), column=None if col == "*" else col)
        else:
            select.append(tok)
        if p.peek() == ",":
            p.next()
            continue
        break

    p.expect("from")
    table = p.next()

    join = None
    if p.peek() and p.peek().lower() == "join":
        p.next()
        other = p.next()
        p.expect("on")
        left = p.next()
        p.expect("=")
        right = p.next()
        join = Join(table=other, left_column=left.split(".")[-1], right_column=right.split(".")[-1])

    filters: list[Filter] = []
    if p.peek() and p.peek().lower() == "where":
        p.next()
        while True:
            col = p.next()
            op = p.next()
            if op.lower() == "in":
                p.expect("[")
                values: list[Any] = []
                if p.peek() != "]":
                    values.append(p.parse_value())
                    while p.peek() == ",":
                        p.next()
                        values.append(p.parse_value())
                p.expect("]")
                filters.append(Filter(column=col, op="in", value=values))
            else:
                if op not in ("=", "!=", "<", "<=", ">", ">="):
                    raise MiniQuerySyntaxError(f"unknown operator {op!r}")
                filters.append(Filter(column=col, op=op, value=p.parse_value()))
            if p.peek() and p.peek().lower() == "and":
                p.next()
                continue
            break

    group_by: list[str] = []
    if p.peek() and p.peek().lower() == "group":
        p.next()
        p.expect("by")
        group_by.append(p.next())
        while p.peek() == ",":
            p.next()
            group_by.append(p.next())

    if p.peek() is not None:
        raise MiniQuerySyntaxError(f"trailing tokens: {' '.join(p.tokens[p.pos:])!r}")

    if aggregate is not None:
        return StructuredQuery(
            table=table,
            select=tuple(c for c in select if c != "*"),
            join=join,
            filters=tuple(filters),
            aggregate=aggregate,
            group_by=tuple(group_by or [c for c in select if c != "*"]),
        )
    return StructuredQuery(
        table=table,
        select=tuple(select) or ("*",),
        join=join,
        filters=tuple(filters),
    )
