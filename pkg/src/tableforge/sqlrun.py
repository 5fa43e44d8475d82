"""Execute generated SQL against a table loaded as the relation ``df``.

SQLite semantics, columns always quoted. A column is typed numeric iff every
non-empty cell parses as a number (thousands separators stripped); otherwise
text. Each execution uses a private in-memory database.
"""

from __future__ import annotations

import csv
import json
import sqlite3
from pathlib import Path

from .canonical import CanonicalValue, canonicalize, parse_number
from .ingest import RawTable


class SqlError(Exception):
    pass


class SqlSyntaxError(SqlError):
    pass


class EmptyResultError(SqlError):
    pass


def infer_column_types(table: RawTable) -> list[str]:
    """Per-column type tags: "number" or "text"."""
    types = []
    for col in range(len(table.headers)):
        values = [v for v in table.column_values(col) if v.strip()]
        if values and all(parse_number(v) is not None for v in values):
            types.append("number")
        else:
            types.append("text")
    return types


def _unique_names(headers) -> list[str]:
    seen: dict[str, int] = {}
    names = []
    for h in headers:
        name = h or "column"
        if name in seen:
            seen[name] += 1
            name = f"{name}_{seen[name]}"
        else:
            seen[name] = 0
        names.append(name)
    return names


def load_table(conn: sqlite3.Connection, table: RawTable) -> list[str]:
    names = _unique_names(table.headers)
    types = infer_column_types(table)
    decls = ", ".join(
        f'"{n}" {"REAL" if t == "number" else "TEXT"}' for n, t in zip(names, types)
    )
    conn.execute(f"CREATE TABLE df ({decls})")
    placeholders = ", ".join("?" for _ in names)
    for row in table.rows:
        values = []
        for cell, t in zip(row, types):
            if t == "number":
                values.append(parse_number(cell.text) if cell.text.strip() else None)
            else:
                values.append(cell.text)
        conn.execute(f"INSERT INTO df VALUES ({placeholders})", values)
    return names


def execute_sql(sql: str, table: RawTable) -> CanonicalValue:
    """Run the query and canonicalize its result.

    Single cell -> scalar; one row -> mapping; one column -> list; larger
    results -> list of row mappings. An empty result is an error (the
    generation contract requires non-empty results).
    """
    conn = sqlite3.connect(":memory:")
    try:
        load_table(conn, table)
        try:
            cursor = conn.execute(sql)
        except sqlite3.Error as exc:
            raise SqlSyntaxError(str(exc)) from exc
        rows = cursor.fetchall()
        if not rows or all(all(v is None for v in r) for r in rows):
            raise EmptyResultError("query produced an empty result")
        cols = [d[0] for d in cursor.description]
    finally:
        conn.close()

    if len(rows) == 1 and len(cols) == 1:
        return canonicalize(rows[0][0])
    if len(rows) == 1:
        return canonicalize(dict(zip(cols, rows[0])))
    if len(cols) == 1:
        return canonicalize([r[0] for r in rows])
    return canonicalize([dict(zip(cols, r)) for r in rows])


def write_table_csv(table: RawTable, csv_path: str | Path, types_path: str | Path | None = None) -> None:
    """Persist the table as CSV plus a sidecar JSON of column types.

    This is the data handoff format shared with the script sandbox, so both
    execution paths see identical data.
    """
    names = _unique_names(table.headers)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in table.rows:
            writer.writerow([c.text for c in row])
    if types_path is not None:
        types = dict(zip(names, infer_column_types(table)))
        Path(types_path).write_text(json.dumps(types, ensure_ascii=False, indent=2))
