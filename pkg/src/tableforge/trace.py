"""Reasoning-trace back-translation and validation.

A trace is generated from (compacted context, question, verified answer)
only; the structured table is strictly withheld from the prompt and that
withholding is asserted, not assumed.
"""

from __future__ import annotations

import logging
import math
import re
import statistics
from dataclasses import dataclass

from .canonical import CanonicalValue, normalize_text
from .gateway import ChatRequest, Gateway
from .ingest import RawTable
from .tokens import count_tokens

log = logging.getLogger(__name__)

STEP_MARKER_RE = re.compile(r"^\s*\*\s*Step\s+\d+\s*:", re.MULTILINE | re.IGNORECASE)
LENGTH_WARN_RANGE = (500, 10_000)  # observed token-length band; warn outside


class TraceError(Exception):
    pass


class TableLeakError(TraceError):
    """The serialized table appeared in a trace-generation prompt."""


class TraceValidationError(TraceError):
    pass


@dataclass(frozen=True)
class ReasoningTrace:
    text: str
    token_count: int
    step_count: int
    teacher_id: str

    def __post_init__(self):
        if self.step_count < 2:
            raise ValueError("a trace needs at least 2 steps")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "token_count": self.token_count,
            "step_count": self.step_count,
            "teacher_id": self.teacher_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReasoningTrace":
        return cls(**d)


def count_steps(text: str) -> int:
    return len(STEP_MARKER_RE.findall(text))


def assert_table_withheld(prompt: str, table: RawTable) -> None:
    """Reject a prompt that contains any full serialized row of the table."""
    norm_prompt = normalize_text(prompt)
    for row in table.rows:
        texts = [c.text for c in row if c.text.strip()]
        if len(texts) < 2:
            continue
        serialized = normalize_text(" ".join(texts))
        if serialized and serialized in norm_prompt:
            raise TableLeakError(f"table {table.table_id} row leaked into trace prompt")


def generate_trace(
    question: str,
    answer: CanonicalValue,
    context_text: str,
    gateway: Gateway,
    table: RawTable | None = None,
    teacher_id: str = "teacher",
) -> ReasoningTrace:
    """Back-translate a step-structured trace. ``table`` (when provided) is
    only used to assert it does not leak into the prompt."""
    prompt = gateway.render(
        "trace_generation",
        {"context": context_text, "question": question, "answer": answer.render()},
    )
    if table is not None:
        assert_table_withheld(prompt, table)
    response = gateway.complete(
        ChatRequest(template_name="trace_generation", rendered_prompt=prompt)
    ).text

    steps = count_steps(response)
    if steps == 0:
        raise TraceValidationError("no step markers in generated trace")
    return ReasoningTrace(
        text=response,
        token_count=count_tokens(response),
        step_count=steps,
        teacher_id=teacher_id,
    )


@dataclass(frozen=True)
class TraceValidation:
    passed: bool
    reasons: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()


def validate_trace(trace: ReasoningTrace, answer: CanonicalValue) -> TraceValidation:
    """Fail on missing markers or a final step that omits the answer;
    lengths outside the expected band only warn."""
    reasons = []
    warnings = []
    markers = list(STEP_MARKER_RE.finditer(trace.text))
    if not markers:
        reasons.append("no step markers")
        return TraceValidation(False, tuple(reasons))

    final_step = trace.text[markers[-1].start() :]
    if normalize_text(answer.render()) not in normalize_text(final_step):
        reasons.append("final step does not state the answer")

    lo, hi = LENGTH_WARN_RANGE
    if not lo <= trace.token_count <= hi:
        warnings.append(f"trace length {trace.token_count} tokens outside [{lo}, {hi}]")

    return TraceValidation(not reasons, tuple(reasons), tuple(warnings))


def trace_statistics(token_counts: list[int], bins_per_decade: int = 4) -> dict:
    """Log-scale-binned histogram of trace lengths plus the exact median."""
    if not token_counts:
        return {"count": 0, "median": None, "histogram": []}
    histogram: dict[tuple[float, float], int] = {}
    for n in token_counts:
        exponent = math.floor(math.log10(max(1, n)) * bins_per_decade)
        lo = 10 ** (exponent / bins_per_decade)
        hi = 10 ** ((exponent + 1) / bins_per_decade)
        histogram[(lo, hi)] = histogram.get((lo, hi), 0) + 1
    return {
        "count": len(token_counts),
        "median": statistics.median(token_counts),
        "histogram": [
            {"lo": round(lo, 2), "hi": round(hi, 2), "count": c}
            for (lo, hi), c in sorted(histogram.items())
        ],
    }
