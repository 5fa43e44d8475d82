"""Question/SQL generation with Likert quality gating and SQL execution."""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass

from .canonical import CanonicalValue
from .expansion import ExpandedTable
from .gateway import Gateway
from .ingest import RawTable, table_to_markdown
from .sqlrun import EmptyResultError, SqlSyntaxError, execute_sql

log = logging.getLogger(__name__)

NO_CONDITION = "No condition column"
MAX_ATTEMPTS = 3

QUALITY_THRESHOLDS = (3, 4, 4)  # complexity, self-containedness, naturalness


class QaError(Exception):
    pass


class ResponseParseError(QaError):
    """Malformed gateway response; consumes one attempt."""


class QaExhaustedError(QaError):
    def __init__(self, reasons: list[str]):
        super().__init__("all attempts failed: " + "; ".join(reasons))
        self.reasons = reasons


@dataclass(frozen=True)
class QualityRatings:
    complexity: int
    self_containedness: int
    naturalness: int

    def __post_init__(self):
        for name, v in self.as_dict().items():
            if not 1 <= v <= 5:
                raise ValueError(f"{name} rating {v} outside 1..5")

    def as_dict(self) -> dict[str, int]:
        return {
            "complexity": self.complexity,
            "self_containedness": self.self_containedness,
            "naturalness": self.naturalness,
        }

    @property
    def total(self) -> int:
        return self.complexity + self.self_containedness + self.naturalness


@dataclass(frozen=True)
class TableEnvelope:
    table: RawTable | ExpandedTable
    metadata: str
    condition_column: str = NO_CONDITION

    def __post_init__(self):
        if self.condition_column != NO_CONDITION:
            if not isinstance(self.table, ExpandedTable):
                raise ValueError("condition column requires an expanded table")
            if self.condition_column not in self.table.added_names:
                raise ValueError("condition column must name an added column")

    @property
    def flat_table(self) -> RawTable:
        if isinstance(self.table, ExpandedTable):
            return self.table.as_table()
        return self.table

    @property
    def from_expanded(self) -> bool:
        return isinstance(self.table, ExpandedTable)


@dataclass(frozen=True)
class QaCandidate:
    question: str
    sql: str
    attempt: int
    ratings: QualityRatings | None = None
    sql_answer: CanonicalValue | None = None

    def __post_init__(self):
        if not 1 <= self.attempt <= MAX_ATTEMPTS:
            raise ValueError("attempt outside 1..3")
        if self.question and not self.sql:
            raise ValueError("sql must be non-empty when question present")


def select_condition_column(table: RawTable | ExpandedTable, seed: int) -> str | None:
    """Seeded uniform choice among added columns; plain tables get none."""
    if isinstance(table, ExpandedTable):
        return random.Random(seed).choice(table.added_names)
    return None


_BLOCK_RE = r"\[\[\s*##\s*{name}\s*##\s*\]\]\s*(.+?)(?=\n\[\[\s*##|\Z)"
_SQL_FENCE_RE = re.compile(r"```sql\s*(.+?)```", re.DOTALL | re.IGNORECASE)
_ANY_FENCE_RE = re.compile(r"```\w*\s*(.+?)```", re.DOTALL)


def _block(text: str, name: str) -> str | None:
    m = re.search(_BLOCK_RE.format(name=name), text, re.DOTALL | re.IGNORECASE)
    return m.group(1).strip() if m else None


def parse_question_sql(text: str) -> tuple[str, str]:
    question = _block(text, "question")
    if question is None:
        m = re.search(r"^\s*question\s*:\s*(.+)$", text, re.IGNORECASE | re.MULTILINE)
        question = m.group(1).strip() if m else None

    sql = None
    m = _SQL_FENCE_RE.search(text)
    if m:
        sql = m.group(1).strip()
    if sql is None:
        block = _block(text, "sql")
        if block:
            fence = _ANY_FENCE_RE.search(block)
            sql = (fence.group(1) if fence else block).strip()
    if sql is None:
        m = re.search(r"\b(SELECT|WITH)\b.+", text, re.IGNORECASE | re.DOTALL)
        sql = m.group(0).strip() if m else None

    if not question:
        raise ResponseParseError("no question found in response")
    if not sql:
        raise ResponseParseError("no SQL found in response")
    # strip any fence that slipped into a question block
    question = question.split("```")[0].strip()
    return question, sql


def generate_question(envelope: TableEnvelope, gateway: Gateway, seed: int | None = None) -> tuple[str, str]:
    flat = envelope.flat_table
    response = gateway.ask(
        "qa_generation",
        {
            "table": table_to_markdown(flat.headers, flat.rows),
            "column_name": envelope.condition_column,
            "metadata": envelope.metadata,
        },
        seed=seed,
    ).text
    return parse_question_sql(response)


_RATING_RES = {
    "complexity": re.compile(r"complexity\s*\**\s*[:\-=]?\s*\**\s*([0-9]+)", re.IGNORECASE),
    "self_containedness": re.compile(r"self[\s_\-]?containedness\s*\**\s*[:\-=]?\s*\**\s*([0-9]+)", re.IGNORECASE),
    "naturalness": re.compile(r"naturalness\s*\**\s*[:\-=]?\s*\**\s*([0-9]+)", re.IGNORECASE),
}


def parse_ratings(text: str) -> QualityRatings:
    """Extract the trailing rating for each criterion; discussion text is ignored."""
    values = {}
    for name, pattern in _RATING_RES.items():
        matches = pattern.findall(text)
        if not matches:
            raise ResponseParseError(f"no {name} rating in response")
        values[name] = int(matches[-1])
    try:
        return QualityRatings(**values)
    except ValueError as exc:
        raise ResponseParseError(str(exc)) from exc


def judge_quality(question: str, gateway: Gateway) -> QualityRatings:
    if not question:
        raise ValueError("question must be non-empty")
    response = gateway.ask("quality_check", {"question": question}).text
    return parse_ratings(response)


def gate_quality(ratings: QualityRatings) -> bool:
    c, s, n = QUALITY_THRESHOLDS
    return ratings.complexity >= c and ratings.self_containedness >= s and ratings.naturalness >= n


def synthesize_qa(
    envelope: TableEnvelope,
    gateway: Gateway,
    max_attempts: int = MAX_ATTEMPTS,
    seed: int = 0,
) -> QaCandidate:
    """Generate -> judge -> gate -> execute, retrying the whole step on failure.

    Raises QaExhaustedError with per-attempt reasons after ``max_attempts``
    failures; a failed SQL execution consumes an attempt too.
    """
    flat = envelope.flat_table
    reasons: list[str] = []
    for attempt in range(1, max_attempts + 1):
        try:
            question, sql = generate_question(envelope, gateway, seed=seed + attempt - 1)
        except ResponseParseError as exc:
            reasons.append(f"attempt {attempt}: {exc}")
            continue
        try:
            ratings = judge_quality(question, gateway)
        except ResponseParseError as exc:
            reasons.append(f"attempt {attempt}: ratings {exc}")
            continue
        if not gate_quality(ratings):
            reasons.append(f"attempt {attempt}: below quality thresholds {ratings.as_dict()}")
            continue
        try:
            answer = execute_sql(sql, flat)
        except (SqlSyntaxError, EmptyResultError) as exc:
            reasons.append(f"attempt {attempt}: sql {exc}")
            continue
        if not answer.fits_answer_limit():
            reasons.append(f"attempt {attempt}: answer has {answer.size} elements (max 3)")
            continue
        return QaCandidate(question=question, sql=sql, attempt=attempt, ratings=ratings, sql_answer=answer)
    raise QaExhaustedError(reasons)
