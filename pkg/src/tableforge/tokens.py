"""Token counting with pluggable encodings.

All budget arithmetic in the pipeline goes through a named counter so that
budgets are exact with respect to whatever tokenizer is configured.  When the
``tiktoken`` package is installed its encodings are used directly; otherwise a
deterministic byte-pair-style approximation stands in (same pre-tokenization
regex family as modern GPT vocabularies, with a fixed per-piece cost model).
The approximation is stable across runs and never exceeds the UTF-8 byte
length of the input.
"""

from __future__ import annotations

import math
import re
from typing import Callable

DEFAULT_ENCODING = "o200k_base"

# Word / number / punctuation pre-tokenization, close to the splitting used by
# GPT-style byte-level BPE vocabularies. Digits are grouped in runs of <= 3.
_PRETOKEN_RE = re.compile(
    r"'(?:[sdmt]|ll|ve|re)"
    r"| ?[A-Za-zÀ-ɏͰ-῿Ⰰ-퟿]+"
    r"| ?\d{1,3}"
    r"| ?[^\sA-Za-z\dÀ-ɏͰ-῿Ⰰ-퟿]+"
    r"|\s+"
)


def _piece_cost(piece: str) -> int:
    """Approximate token cost of one pre-token."""
    stripped = piece.lstrip(" ")
    if not stripped:
        # pure whitespace run: newlines and long runs merge aggressively
        return max(1, math.ceil(len(piece) / 16))
    nbytes = len(stripped.encode("utf-8"))
    if stripped.isdigit():
        return 1  # already grouped into <=3 digit runs
    if stripped.isalpha() and stripped.isascii():
        # common words are single tokens; long/rare words split roughly per 8 chars
        return max(1, math.ceil(nbytes / 8))
    # punctuation runs and non-ASCII text split more finely
    return max(1, math.ceil(nbytes / 3))


def approx_count(text: str) -> int:
    if not text:
        return 0
    return sum(_piece_cost(p) for p in _PRETOKEN_RE.findall(text))


def _tiktoken_counter(encoding_id: str) -> Callable[[str], int] | None:
    try:
        import tiktoken
    except ImportError:
        return None
    try:
        enc = tiktoken.get_encoding(encoding_id)
    except Exception:
        return None
    return lambda text: len(enc.encode(text, disallowed_special=()))


class UnknownEncodingError(ValueError):
    pass


_COUNTERS: dict[str, Callable[[str], int]] = {}


def register_counter(encoding_id: str, fn: Callable[[str], int]) -> None:
    _COUNTERS[encoding_id] = fn


def get_counter(encoding_id: str = DEFAULT_ENCODING) -> Callable[[str], int]:
    if encoding_id in _COUNTERS:
        return _COUNTERS[encoding_id]
    if encoding_id == DEFAULT_ENCODING:
        fn = _tiktoken_counter(encoding_id) or approx_count
        _COUNTERS[encoding_id] = fn
        return fn
    fn = _tiktoken_counter(encoding_id)
    if fn is None:
        raise UnknownEncodingError(f"unknown encoding id: {encoding_id!r}")
    _COUNTERS[encoding_id] = fn
    return fn


def count_tokens(text: str, encoding_id: str = DEFAULT_ENCODING) -> int:
    """Count tokens of ``text`` under the named encoding."""
    return get_counter(encoding_id)(text)
