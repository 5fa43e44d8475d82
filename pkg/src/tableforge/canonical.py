"""Canonical answer values shared by the SQL and script execution paths."""

from __future__ import annotations

import json
import math
import re
import unicodedata
from dataclasses import dataclass
from typing import Any

MAX_ANSWER_ELEMENTS = 3  # final answers: lists/mappings capped at 3 entries


@dataclass(frozen=True)
class CanonicalValue:
    kind: str  # scalar-string | scalar-number | list | mapping
    payload: Any

    def __post_init__(self):
        if self.kind not in ("scalar-string", "scalar-number", "list", "mapping"):
            raise ValueError(f"unknown kind: {self.kind}")

    @property
    def size(self) -> int:
        if self.kind in ("list", "mapping"):
            return len(self.payload)
        return 1

    def fits_answer_limit(self) -> bool:
        return self.size <= MAX_ANSWER_ELEMENTS

    def to_dict(self) -> dict:
        return {"kind": self.kind, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: dict) -> "CanonicalValue":
        return cls(kind=d["kind"], payload=d["payload"])

    def render(self) -> str:
        if self.kind == "scalar-string":
            return self.payload
        if self.kind == "scalar-number":
            n = self.payload
            if isinstance(n, float) and n.is_integer():
                return str(int(n))
            return repr(n)
        return json.dumps(self.payload, ensure_ascii=False, sort_keys=(self.kind == "mapping"))


_NUMBER_RE = re.compile(r"^[+-]?(\d{1,3}(,\d{3})+|\d+)(\.\d+)?([eE][+-]?\d+)?$")


def parse_number(text: str) -> float | int | None:
    """Parse a numeric cell, tolerating thousands separators; None if not numeric."""
    s = text.strip()
    if not s or not _NUMBER_RE.match(s):
        return None
    s = s.replace(",", "")
    if re.fullmatch(r"[+-]?\d+", s):
        return int(s)
    return float(s)


def canonicalize(value: Any) -> CanonicalValue:
    """Fold an arbitrary execution result into a CanonicalValue. Idempotent."""
    if isinstance(value, CanonicalValue):
        return value
    if isinstance(value, bool):
        return CanonicalValue("scalar-string", str(value))
    if isinstance(value, (int, float)):
        if isinstance(value, float) and not math.isfinite(value):
            return CanonicalValue("scalar-string", str(value))
        return CanonicalValue("scalar-number", value)
    if isinstance(value, str):
        num = parse_number(value)
        if num is not None:
            return CanonicalValue("scalar-number", num)
        return CanonicalValue("scalar-string", value.strip())
    if isinstance(value, dict):
        return CanonicalValue("mapping", {str(k): _plain(v) for k, v in value.items()})
    if isinstance(value, (list, tuple)):
        items = [_plain(v) for v in value]
        if len(items) == 1:
            return canonicalize(items[0])
        return CanonicalValue("list", items)
    return CanonicalValue("scalar-string", str(value))


def _plain(value: Any) -> Any:
    if isinstance(value, CanonicalValue):
        return value.payload
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, str):
        num = parse_number(value)
        return num if num is not None else value.strip()
    return value


def normalize_text(text: str) -> str:
    """Case/diacritic/whitespace/punctuation folding for string comparison."""
    text = unicodedata.normalize("NFKD", text)
    text = "".join(ch for ch in text if not unicodedata.combining(ch))
    text = text.casefold()
    text = re.sub(r"[^\w\s]", " ", text)
    return re.sub(r"\s+", " ", text).strip()


def numeric_payload(value: CanonicalValue) -> float | None:
    if value.kind == "scalar-number":
        return float(value.payload)
    if value.kind == "scalar-string":
        n = parse_number(value.payload)
        return float(n) if n is not None else None
    return None
