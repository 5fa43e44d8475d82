"""Final record assembly, benchmark construction, grading and metric kernels."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field

from .canonical import CanonicalValue
from .gateway import Gateway
from .qa import QualityRatings, gate_quality
from .trace import ReasoningTrace
from .verify import ConsensusParseError, check_consensus

log = logging.getLogger(__name__)

BENCH_SELECT_N = 252
BENCH_SPLIT_SIZES = (178, 50)  # test, validation
RATING_SUM_THRESHOLD = 14


class DatasetError(Exception):
    pass


class AssemblyError(DatasetError):
    pass


class InsufficientPoolError(DatasetError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    record_id: str
    question: str
    answer: CanonicalValue
    context_ref: str
    trace: ReasoningTrace
    ratings: QualityRatings
    from_expanded: bool
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not gate_quality(self.ratings):
            raise ValueError("record ratings must pass the quality gate")
        if self.answer.kind.startswith("scalar") and str(self.answer.payload) == "":
            raise ValueError("answer must be non-empty")

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "question": self.question,
            "answer": self.answer.to_dict(),
            "context_ref": self.context_ref,
            "trace": self.trace.to_dict(),
            "ratings": self.ratings.as_dict(),
            "from_expanded": self.from_expanded,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecord":
        return cls(
            record_id=d["record_id"],
            question=d["question"],
            answer=CanonicalValue.from_dict(d["answer"]),
            context_ref=d["context_ref"],
            trace=ReasoningTrace.from_dict(d["trace"]),
            ratings=QualityRatings(**d["ratings"]),
            from_expanded=d["from_expanded"],
            provenance=d.get("provenance", {}),
        )


@dataclass(frozen=True)
class BenchSplit:
    test: tuple[str, ...]
    validation: tuple[str, ...]
    seed: int

    def __post_init__(self):
        if set(self.test) & set(self.validation):
            raise ValueError("test and validation must be disjoint")


@dataclass(frozen=True)
class Revision:
    record_id: str
    status: str  # keep | revise | discard
    question: str | None = None
    answer: CanonicalValue | None = None
    note: str = ""

    def __post_init__(self):
        if self.status not in ("keep", "revise", "discard"):
            raise ValueError(f"unknown revision status: {self.status}")


class RevisionSheet:
    """Human-review outcomes, one status per pooled record."""

    def __init__(self, revisions: list[Revision]):
        self.by_id = {r.record_id: r for r in revisions}
        if len(self.by_id) != len(revisions):
            raise ValueError("duplicate record_id in revision sheet")

    def status_for(self, record_id: str) -> Revision:
        return self.by_id.get(record_id, Revision(record_id=record_id, status="keep"))

    @classmethod
    def from_jsonl(cls, path) -> "RevisionSheet":
        revisions = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                answer = CanonicalValue.from_dict(d["answer"]) if d.get("answer") else None
                revisions.append(
                    Revision(
                        record_id=d["record_id"],
                        status=d["status"],
                        question=d.get("question"),
                        answer=answer,
                        note=d.get("note", ""),
                    )
                )
        return cls(revisions)


def make_record_id(page: str, table_id: str, question: str) -> str:
    payload = json.dumps([page, table_id, question], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def assemble_record(
    *,
    page: str,
    table_id: str,
    question: str,
    answer: CanonicalValue,
    context_ref: str,
    trace: ReasoningTrace | None,
    ratings: QualityRatings | None,
    from_expanded: bool,
    condition_column: str | None = None,
    teacher_id: str = "",
) -> DatasetRecord:
    missing = [
        name
        for name, value in (("question", question), ("trace", trace), ("ratings", ratings), ("context_ref", context_ref))
        if not value
    ]
    if missing:
        raise AssemblyError(f"missing stage outputs: {', '.join(missing)}")
    provenance = {"page": page, "table_id": table_id, "teacher_id": teacher_id}
    if condition_column:
        provenance["condition_column"] = condition_column
    return DatasetRecord(
        record_id=make_record_id(page, table_id, question),
        question=question,
        answer=answer,
        context_ref=context_ref,
        trace=trace,
        ratings=ratings,
        from_expanded=from_expanded,
        provenance=provenance,
    )


def select_bench_pool(records: list[DatasetRecord]) -> list[DatasetRecord]:
    """Expanded-table records rated 4-5 complexity, plus the rest at 5."""
    return [
        r
        for r in records
        if (r.from_expanded and r.ratings.complexity in (4, 5))
        or (not r.from_expanded and r.ratings.complexity == 5)
    ]


def sample_and_split(
    pool: list[DatasetRecord],
    revision: RevisionSheet,
    n_select: int = BENCH_SELECT_N,
    sizes: tuple[int, int] = BENCH_SPLIT_SIZES,
    seed: int = 0,
) -> BenchSplit:
    """Seeded selection from the pool, revision-applied, split into fixed sizes."""
    if len(pool) < n_select:
        raise InsufficientPoolError(f"pool has {len(pool)} records, need {n_select}")
    rng = random.Random(seed)
    ordered = sorted(pool, key=lambda r: r.record_id)
    chosen = rng.sample(ordered, n_select)
    survivors = [r for r in chosen if revision.status_for(r.record_id).status != "discard"]
    n_test, n_val = sizes
    if len(survivors) < n_test + n_val:
        raise InsufficientPoolError(
            f"{len(survivors)} survivors after revisions, need {n_test + n_val}"
        )
    shuffled = sorted(survivors, key=lambda r: r.record_id)
    rng.shuffle(shuffled)
    test = tuple(r.record_id for r in shuffled[:n_test])
    validation = tuple(r.record_id for r in shuffled[n_test : n_test + n_val])
    return BenchSplit(test=test, validation=validation, seed=seed)


def apply_revisions(records: list[DatasetRecord], revision: RevisionSheet) -> list[DatasetRecord]:
    out = []
    for r in records:
        rev = revision.status_for(r.record_id)
        if rev.status == "discard":
            continue
        if rev.status == "revise":
            r = DatasetRecord(
                record_id=r.record_id,
                question=rev.question or r.question,
                answer=rev.answer or r.answer,
                context_ref=r.context_ref,
                trace=r.trace,
                ratings=r.ratings,
                from_expanded=r.from_expanded,
                provenance={**r.provenance, "revised": True},
            )
        out.append(r)
    return out


def select_by_rating_sum(
    records: list[DatasetRecord],
    min_sum: int = RATING_SUM_THRESHOLD,
    n: int = 100,
    seed: int = 0,
) -> list[DatasetRecord]:
    """Seeded sample of n records whose rating sum meets the threshold."""
    eligible = [r for r in records if r.ratings.total >= min_sum]
    if len(eligible) < n:
        raise InsufficientPoolError(f"{len(eligible)} eligible records, need {n}")
    rng = random.Random(seed)
    return rng.sample(sorted(eligible, key=lambda r: r.record_id), n)


def grade_answer(prediction: CanonicalValue, gold: CanonicalValue, question_meta: str, gateway: Gateway) -> bool:
    """Equivalence precheck first, then the comparison judge; an unparseable
    verdict counts incorrect and is flagged for review."""
    try:
        return check_consensus(prediction, gold, question_meta, gateway).equivalent
    except ConsensusParseError:
        log.warning("unparseable grader verdict; counted incorrect (flagged for review)")
        return False


def oolong_score(gold: float, pred) -> float:
    """0.75 raised to the absolute gold/prediction difference; 0 for non-numbers."""
    if not isinstance(pred, (int, float)) or isinstance(pred, bool):
        log.warning("non-numeric prediction %r scored 0 (flagged)", pred)
        return 0.0
    return 0.75 ** abs(gold - pred)


def tolerance_match(pred: float, gold: float, rel: float = 0.01) -> bool:
    """Relative-tolerance equality; a zero gold requires an exact match."""
    if gold == 0:
        return pred == 0
    return abs(pred - gold) <= rel * abs(gold)


def write_records_jsonl(records: list[DatasetRecord], path, contexts: dict[str, str] | None = None, inline_context: bool = False) -> None:
    """Emit records sorted by record_id; contexts inlined or by reference."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in sorted(records, key=lambda x: x.record_id):
            d = r.to_dict()
            if inline_context and contexts is not None:
                d["context"] = contexts.get(r.context_ref, "")
            fh.write(json.dumps(d, ensure_ascii=False, sort_keys=True) + "\n")


def read_records_jsonl(path) -> list[DatasetRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(DatasetRecord.from_dict(json.loads(line)))
    return records
