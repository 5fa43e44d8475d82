"""Table extraction from Wikipedia page surface forms.

Parses HTML tables (Markdown as a fallback when a page yields no HTML
tables), expands rowspan/colspan into rectangular cells, classifies columns
as index vs data, and applies the size filter.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace
from html import escape
from html.parser import HTMLParser
from urllib.parse import unquote

from .wiki import WikiPage

log = logging.getLogger(__name__)

INDEX_HEADER_NAMES = {"#", "no.", "no", "rank", "pos."}


@dataclass(frozen=True)
class Cell:
    text: str
    links: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"text": self.text, "links": list(self.links)}

    @classmethod
    def from_dict(cls, d: dict) -> "Cell":
        return cls(text=d["text"], links=tuple(d.get("links", [])))


@dataclass(frozen=True)
class RawTable:
    table_id: str
    source: str  # page title
    caption: str | None
    headers: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...]
    column_roles: tuple[str, ...] = ()  # "index" | "data", one per column once classified

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.headers):
                raise ValueError("table rows must be rectangular")
        if self.column_roles and len(self.column_roles) != len(self.headers):
            raise ValueError("column_roles must have one entry per column")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def data_column_count(self) -> int:
        if not self.column_roles:
            raise ValueError("columns not classified yet")
        return sum(1 for r in self.column_roles if r == "data")

    def column_values(self, col: int) -> list[str]:
        return [row[col].text for row in self.rows]

    def to_dict(self) -> dict:
        return {
            "table_id": self.table_id,
            "source": self.source,
            "caption": self.caption,
            "headers": list(self.headers),
            "rows": [[c.to_dict() for c in row] for row in self.rows],
            "column_roles": list(self.column_roles),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RawTable":
        return cls(
            table_id=d["table_id"],
            source=d["source"],
            caption=d.get("caption"),
            headers=tuple(d["headers"]),
            rows=tuple(tuple(Cell.from_dict(c) for c in row) for row in d["rows"]),
            column_roles=tuple(d.get("column_roles", [])),
        )


@dataclass(frozen=True)
class TableFilterPolicy:
    min_rows: int = 5
    max_rows: int = 30
    min_data_cols: int = 2
    max_data_cols: int = 6

    def __post_init__(self):
        if not (0 < self.min_rows <= self.max_rows):
            raise ValueError("row bounds must be positive with min <= max")
        if not (0 < self.min_data_cols <= self.max_data_cols):
            raise ValueError("column bounds must be positive with min <= max")


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str | None = None


def compute_table_id(source: str, caption: str | None, headers, rows) -> str:
    """Stable hash over normalized table content."""
    payload = json.dumps(
        {
            "source": source,
            "caption": caption or "",
            "headers": [h.strip() for h in headers],
            "rows": [[(c.text.strip(), list(c.links)) for c in row] for row in rows],
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def make_table(source: str, caption: str | None, headers, rows) -> RawTable:
    headers = tuple(headers)
    rows = tuple(tuple(row) for row in rows)
    return RawTable(
        table_id=compute_table_id(source, caption, headers, rows),
        source=source,
        caption=caption,
        headers=headers,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# HTML extraction


class _RawCell:
    __slots__ = ("text", "links", "rowspan", "colspan", "is_header")

    def __init__(self, rowspan: int, colspan: int, is_header: bool):
        self.text: list[str] = []
        self.links: list[str] = []
        self.rowspan = max(1, rowspan)
        self.colspan = max(1, colspan)
        self.is_header = is_header


def _int_attr(attrs: dict, name: str) -> int:
    try:
        return int(str(attrs.get(name, "1")).strip() or "1")
    except ValueError:
        return 1


class _TableParser(HTMLParser):
    """Collects top-level tables; nested tables are skipped (and flagged)."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.tables: list[dict] = []
        self._depth = 0
        self._current: dict | None = None
        self._row: list[_RawCell] | None = None
        self._cell: _RawCell | None = None
        self._in_caption = False

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        if tag == "table":
            self._depth += 1
            if self._depth == 1:
                self._current = {"caption": "", "rows": [], "nested": False}
            elif self._current is not None:
                self._current["nested"] = True
            return
        if self._depth != 1 or self._current is None:
            return
        if tag == "caption":
            self._in_caption = True
        elif tag == "tr":
            self._row = []
        elif tag in ("td", "th"):
            if self._row is None:
                self._row = []
            self._cell = _RawCell(
                rowspan=_int_attr(attrs, "rowspan"),
                colspan=_int_attr(attrs, "colspan"),
                is_header=(tag == "th"),
            )
        elif tag == "a" and self._cell is not None:
            href = attrs.get("href", "")
            target = _wiki_link_target(href) or attrs.get("title", "")
            if target:
                self._cell.links.append(target)

    def handle_endtag(self, tag):
        if tag == "table":
            if self._depth == 1 and self._current is not None:
                self._flush_cell()
                self._flush_row()
                self.tables.append(self._current)
                self._current = None
            self._depth = max(0, self._depth - 1)
            return
        if self._depth != 1 or self._current is None:
            return
        if tag == "caption":
            self._in_caption = False
        elif tag == "tr":
            self._flush_cell()
            self._flush_row()
        elif tag in ("td", "th"):
            self._flush_cell()

    def handle_data(self, data):
        if self._depth != 1 or self._current is None:
            return
        if self._in_caption:
            self._current["caption"] += data
        elif self._cell is not None:
            self._cell.text.append(data)

    def _flush_cell(self):
        if self._cell is not None and self._row is not None:
            self._row.append(self._cell)
            self._cell = None

    def _flush_row(self):
        if self._row is not None:
            if self._row:
                self._current["rows"].append(self._row)
            self._row = None


_WIKI_HREF_RE = re.compile(r"^/wiki/([^#?]+)")


def _wiki_link_target(href: str) -> str | None:
    m = _WIKI_HREF_RE.match(href)
    if not m:
        return None
    target = unquote(m.group(1)).replace("_", " ")
    if ":" in target:  # namespace pages (File:, Category:, ...) are not articles
        return None
    return target


def _clean(text: str) -> str:
    text = re.sub(r"\[\d+\]", "", text)  # footnote markers
    return re.sub(r"\s+", " ", text).strip()


def _rectangularize(raw_rows: list[list[_RawCell]]) -> list[list[Cell]]:
    """Expand rowspan/colspan by duplicating the spanned value."""
    grid: list[list[Cell | None]] = []
    pending: dict[tuple[int, int], Cell] = {}  # (row, col) -> carried cell
    for r, raw_row in enumerate(raw_rows):
        row: list[Cell | None] = []
        col = 0
        for rc in raw_row:
            cell = Cell(text=_clean("".join(rc.text)), links=tuple(dict.fromkeys(rc.links)))
            start_col_positions = []
            for _ in range(rc.colspan):
                # remember where this copy lands so rowspans carry downward
                while (r, col) in pending:
                    row.append(pending.pop((r, col)))
                    col += 1
                start_col_positions.append(col)
                row.append(cell)
                col += 1
            for c in start_col_positions:
                for dr in range(1, rc.rowspan):
                    pending[(r + dr, c)] = cell
        while (r, col) in pending:
            row.append(pending.pop((r, col)))
            col += 1
        grid.append(row)
    # drop any dangling carried cells (rowspan overflowing the table)
    width = max((len(row) for row in grid), default=0)
    out: list[list[Cell]] = []
    for row in grid:
        padded = [c if c is not None else Cell("") for c in row]
        padded += [Cell("")] * (width - len(padded))
        out.append(padded)
    return out


def tables_from_html(html: str, source: str) -> list[RawTable]:
    parser = _TableParser()
    try:
        parser.feed(html)
        parser.close()
    except Exception as exc:
        raise ValueError(f"unparseable document for {source!r}: {exc}") from exc

    tables: list[RawTable] = []
    for i, spec in enumerate(parser.tables):
        if spec["nested"]:
            log.info("skipping table %d on %r: contains a nested table", i, source)
            continue
        if len(spec["rows"]) < 2:
            log.info("skipping table %d on %r: fewer than 2 rows", i, source)
            continue
        grid = _rectangularize(spec["rows"])
        headers = [c.text for c in grid[0]]
        if not any(headers):
            log.info("skipping table %d on %r: empty header row", i, source)
            continue
        rows = [tuple(row) for row in grid[1:]]
        caption = _clean(spec["caption"]) or None
        tables.append(make_table(source, caption, headers, rows))
    return tables


def extract_tables(page: WikiPage) -> list[RawTable]:
    """One RawTable per well-formed table element; malformed tables skipped.

    Markdown tables are parsed only when HTML extraction yields nothing.
    """
    tables = tables_from_html(page.html, page.title)
    if not tables:
        tables = _extract_markdown_tables(page)
    return tables


_MD_SEP_RE = re.compile(r"^\s*\|?\s*:?-{3,}:?\s*(\|\s*:?-{3,}:?\s*)*\|?\s*$")


def _split_md_row(line: str) -> list[str]:
    line = line.strip()
    if line.startswith("|"):
        line = line[1:]
    if line.endswith("|"):
        line = line[:-1]
    return [c.strip() for c in line.split("|")]


def _extract_markdown_tables(page: WikiPage) -> list[RawTable]:
    lines = page.html.splitlines()
    tables: list[RawTable] = []
    i = 0
    while i < len(lines) - 1:
        if "|" in lines[i] and _MD_SEP_RE.match(lines[i + 1] or ""):
            headers = _split_md_row(lines[i])
            rows: list[tuple[Cell, ...]] = []
            j = i + 2
            while j < len(lines) and "|" in lines[j] and lines[j].strip():
                cells = _split_md_row(lines[j])
                cells += [""] * (len(headers) - len(cells))
                rows.append(tuple(Cell(_clean(c)) for c in cells[: len(headers)]))
                j += 1
            if rows:
                tables.append(make_table(page.title, None, headers, rows))
            i = j
        else:
            i += 1
    return tables


# ---------------------------------------------------------------------------
# Column classification and filtering


def _strictly_increasing_from_one(values: list[str]) -> bool:
    if not values:
        return False
    try:
        nums = [int(v.strip()) for v in values]
    except ValueError:
        return False
    return nums == list(range(1, len(nums) + 1))


def classify_columns(table: RawTable) -> RawTable:
    """Mark each column index vs data.

    A column is an index column when its header matches a known row-number
    name (case-insensitive), or when its values are the strictly increasing
    integers 1..n. The header rule wins regardless of the values.
    """
    if not table.headers:
        raise ValueError("headers must be present")
    roles = []
    for col, header in enumerate(table.headers):
        if header.strip().lower() in INDEX_HEADER_NAMES:
            roles.append("index")
        elif _strictly_increasing_from_one(table.column_values(col)):
            roles.append("index")
        else:
            roles.append("data")
    return replace(table, column_roles=tuple(roles))


def filter_table(table: RawTable, policy: TableFilterPolicy | None = None) -> FilterDecision:
    """Keep a table iff its row and data-column counts are inside the policy bounds."""
    policy = policy or TableFilterPolicy()
    rows = table.n_rows
    cols = table.data_column_count
    if rows < policy.min_rows:
        return FilterDecision(False, "too-few-rows")
    if rows > policy.max_rows:
        return FilterDecision(False, "too-many-rows")
    if cols < policy.min_data_cols:
        return FilterDecision(False, "too-few-data-cols")
    if cols > policy.max_data_cols:
        return FilterDecision(False, "too-many-data-cols")
    return FilterDecision(True)


def eligible_link_column(table: RawTable) -> int | None:
    """Leftmost data column where every cell carries at least one wiki link."""
    roles = table.column_roles or ("data",) * len(table.headers)
    for col, role in enumerate(roles):
        if role != "data":
            continue
        if table.rows and all(row[col].links for row in table.rows):
            return col
    return None


# ---------------------------------------------------------------------------
# Renderers used by downstream prompts


def table_to_html(headers, rows) -> str:
    parts = ["<table>", "<tr>" + "".join(f"<th>{escape(h)}</th>" for h in headers) + "</tr>"]
    for row in rows:
        parts.append("<tr>" + "".join(f"<td>{escape(c.text if isinstance(c, Cell) else str(c))}</td>" for c in row) + "</tr>")
    parts.append("</table>")
    return "\n".join(parts)


def table_to_markdown(headers, rows) -> str:
    def fmt(cells) -> str:
        texts = [(c.text if isinstance(c, Cell) else str(c)).replace("|", "\\|") for c in cells]
        return "| " + " | ".join(texts) + " |"

    lines = [fmt(headers), "| " + " | ".join("---" for _ in headers) + " |"]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines)


def render_metadata(page: WikiPage, table: RawTable) -> str:
    parts = [f"Page title: {page.title}"]
    if table.caption:
        parts.append(f"Table caption: {table.caption}")
    sections = page.metadata.get("sections", [])
    if sections:
        parts.append("Section path: " + " > ".join(sections))
    if page.hatnotes:
        parts.append("Hatnotes: " + "; ".join(page.hatnotes))
    return "\n".join(parts)
