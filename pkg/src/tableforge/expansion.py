"""Synthetic table expansion grounded in linked-page summaries."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .canonical import normalize_text
from .gateway import Gateway
from .ingest import Cell, RawTable, make_table, table_to_html, tables_from_html
from .wiki import PageNotFoundError

log = logging.getLogger(__name__)

SUMMARY_CHAR_LIMIT = 1200  # bounds prompt size deterministically
DEAD_LINK_ABORT_FRACTION = 0.20
GROUNDING_CELL_THRESHOLD = 0.90
MAX_ADDED_COLUMNS = 3


class ExpansionError(Exception):
    pass


class ExpansionAbortedError(ExpansionError):
    """Too many dead links to ground an expansion."""


class ExpansionParseError(ExpansionError):
    """Gateway response could not be interpreted; retriable once."""


@dataclass(frozen=True)
class LinkedSummary:
    target_title: str
    summary_text: str
    source_column: int
    row: int

    def __post_init__(self):
        if not self.summary_text:
            raise ValueError("summary_text must be non-empty")


@dataclass(frozen=True)
class AddedColumn:
    name: str
    values: tuple[str, ...]


@dataclass(frozen=True)
class TypoEdit:
    row: int
    col: int
    before: str
    after: str

    def to_dict(self) -> dict:
        return {"row": self.row, "col": self.col, "before": self.before, "after": self.after}


@dataclass(frozen=True)
class ExpandedTable:
    base: RawTable
    added_columns: tuple[AddedColumn, ...]
    notes: tuple[str, ...] = ()
    typo_edits: tuple[TypoEdit, ...] = ()

    def __post_init__(self):
        for col in self.added_columns:
            if len(col.values) != self.base.n_rows:
                raise ValueError("added column must have one value per base row")

    @property
    def added_names(self) -> list[str]:
        return [c.name for c in self.added_columns]

    def combined_headers(self) -> tuple[str, ...]:
        return self.base.headers + tuple(self.added_names)

    def combined_rows(self) -> tuple[tuple[Cell, ...], ...]:
        rows = []
        for i, row in enumerate(self.base.rows):
            extra = tuple(Cell(col.values[i]) for col in self.added_columns)
            rows.append(row + extra)
        return tuple(rows)

    def as_table(self) -> RawTable:
        """Flatten to a RawTable (added columns classified as data downstream)."""
        return make_table(self.base.source, self.base.caption, self.combined_headers(), self.combined_rows())

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "added_columns": [{"name": c.name, "values": list(c.values)} for c in self.added_columns],
            "notes": list(self.notes),
            "typo_edits": [e.to_dict() for e in self.typo_edits],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExpandedTable":
        return cls(
            base=RawTable.from_dict(d["base"]),
            added_columns=tuple(AddedColumn(c["name"], tuple(c["values"])) for c in d["added_columns"]),
            notes=tuple(d.get("notes", [])),
            typo_edits=tuple(TypoEdit(**e) for e in d.get("typo_edits", [])),
        )


def gather_link_knowledge(table: RawTable, column: int, client) -> list[LinkedSummary]:
    """Fetch the lead-section summary of each linked page in the column.

    Dead links mark the row unavailable; the expansion aborts when more than
    20% of rows are unavailable.
    """
    summaries: list[LinkedSummary] = []
    dead = 0
    for i, row in enumerate(table.rows):
        links = row[column].links
        if not links:
            dead += 1
            continue
        try:
            text = client.get_summary(links[0])
        except PageNotFoundError:
            log.info("dead link %r in table %s row %d", links[0], table.table_id, i)
            dead += 1
            continue
        if not text:
            dead += 1
            continue
        summaries.append(LinkedSummary(target_title=links[0], summary_text=text, source_column=column, row=i))
    if table.n_rows and dead / table.n_rows > DEAD_LINK_ABORT_FRACTION:
        raise ExpansionAbortedError(
            f"{dead}/{table.n_rows} rows without a resolvable link (> {DEAD_LINK_ABORT_FRACTION:.0%})"
        )
    return summaries


def render_summaries(summaries: list[LinkedSummary]) -> str:
    parts = []
    for s in summaries:
        parts.append(f"[Row {s.row + 1}] {s.target_title}: {s.summary_text[:SUMMARY_CHAR_LIMIT]}")
    return "\n\n".join(parts)


_NOTE_LINE_RE = re.compile(r"^\s*[-*]\s+(.*\S)\s*$")


def _parse_notes(response: str) -> list[str]:
    tail = response.rsplit("</table>", 1)[-1]
    return [m.group(1) for line in tail.splitlines() if (m := _NOTE_LINE_RE.match(line))]


def expand_table(table: RawTable, metadata: str, summaries: list[LinkedSummary], gateway: Gateway) -> ExpandedTable:
    """One expansion round-trip through the gateway.

    The response must contain an HTML table whose leading headers equal the
    base headers; added columns are extracted by header diff. Base cell text
    changes are recorded as typo edits, never silently applied.
    """
    if table.n_rows == 0 or len(summaries) < 0.8 * table.n_rows:
        raise ExpansionAbortedError("summaries must cover at least 80% of rows")
    column = summaries[0].source_column
    response = gateway.ask(
        "table_expansion",
        {
            "table": table_to_html(table.headers, table.rows),
            "metadata": metadata,
            "column_name": table.headers[column],
            "summaries": render_summaries(summaries),
        },
    ).text

    parsed = tables_from_html(response, source=table.source)
    if not parsed:
        raise ExpansionParseError("no HTML table in expansion response")
    new = parsed[0]

    n_base = len(table.headers)
    if tuple(new.headers[:n_base]) != table.headers:
        raise ExpansionParseError("base-headers-changed")
    if len(new.headers) == n_base:
        raise ExpansionParseError("no-columns-added")
    if new.n_rows != table.n_rows:
        raise ExpansionParseError(f"row count changed: {table.n_rows} -> {new.n_rows}")

    typo_edits = []
    base_rows = []
    for r, (old_row, new_row) in enumerate(zip(table.rows, new.rows)):
        cells = []
        for c in range(n_base):
            before, after = old_row[c].text, new_row[c].text
            if before != after:
                typo_edits.append(TypoEdit(row=r, col=c, before=before, after=after))
            cells.append(Cell(text=after, links=old_row[c].links))
        base_rows.append(tuple(cells))
    base = make_table(table.source, table.caption, table.headers, base_rows)

    added = tuple(
        AddedColumn(name=new.headers[c], values=tuple(row[c].text for row in new.rows))
        for c in range(n_base, len(new.headers))
    )
    return ExpandedTable(base=base, added_columns=added, notes=tuple(_parse_notes(response)), typo_edits=tuple(typo_edits))


@dataclass(frozen=True)
class VerificationResult:
    passed: bool
    reasons: tuple[str, ...] = ()


def verify_expansion(
    original: RawTable,
    expanded: ExpandedTable,
    summaries: list[LinkedSummary],
    gateway: Gateway,
) -> VerificationResult:
    """Structural + grounding + LLM relevance checks on an expansion."""
    reasons = []

    if expanded.base.n_rows != original.n_rows:
        reasons.append(f"structural: row count {original.n_rows} -> {expanded.base.n_rows}")
    n_added = len(expanded.added_columns)
    if not (1 <= n_added <= MAX_ADDED_COLUMNS):
        reasons.append(f"structural: {n_added} added columns (must be 1..{MAX_ADDED_COLUMNS})")
    if expanded.base.headers != original.headers:
        reasons.append("structural: base headers changed")
    if reasons:
        return VerificationResult(False, tuple(reasons))

    by_row = {s.row: normalize_text(s.summary_text) for s in summaries}
    grounded = total = 0
    for col in expanded.added_columns:
        for r, value in enumerate(col.values):
            if not value.strip():
                continue
            total += 1
            summary = by_row.get(r)
            if summary and normalize_text(value) in summary:
                grounded += 1
    if total and grounded / total < GROUNDING_CELL_THRESHOLD:
        reasons.append(f"grounding: {grounded}/{total} cells traceable to summaries")
        return VerificationResult(False, tuple(reasons))

    added_desc = "\n".join(f"{c.name}: {', '.join(c.values)}" for c in expanded.added_columns)
    response = gateway.ask(
        "expansion_relevance",
        {
            "table": table_to_html(original.headers, original.rows),
            "added_columns": added_desc,
            "metadata": original.caption or original.source,
        },
    ).text
    if not response.strip().lower().startswith("positive"):
        reasons.append("relevance: judged not relevant")
        return VerificationResult(False, tuple(reasons))

    return VerificationResult(True)
