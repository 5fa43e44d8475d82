"""Evidence corpus assembly and lexical context compaction.

Evidence documents are always included whole; the remaining token budget is
filled with the highest-scoring chunks of the non-evidence documents under a
BM25+ ranking. The same machinery backs the eval-time compaction used when a
benchmark context exceeds the configured fraction of the model window.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .canonical import normalize_text
from .tokens import count_tokens

log = logging.getLogger(__name__)

DEFAULT_CHUNK_CHARS = 1024
NOISY_CHUNK_TOKENS = 256
TRAIN_CONTEXT_BUDGET = 96_000
# compact at eval time when longer than 66% of a 128K (2^17) window
EVAL_COMPACT_THRESHOLD = math.floor(0.66 * 131_072)

SEGMENT_SEPARATOR = "\n\n"


class ContextError(Exception):
    pass


class EmptyCorpusError(ContextError):
    pass


class EvidenceOverBudgetError(ContextError):
    pass


class SearchProviderError(ContextError):
    """Retriable web-search failure."""


@dataclass(frozen=True)
class EvidenceDoc:
    doc_id: str
    origin: str  # wiki-evidence | web-search
    title: str
    text: str
    is_evidence: bool

    def __post_init__(self):
        if not self.text:
            raise ValueError("text must be non-empty")
        if self.origin == "wiki-evidence" and not self.is_evidence:
            raise ValueError("wiki-evidence docs are evidence by definition")

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "origin": self.origin,
            "title": self.title,
            "text": self.text,
            "is_evidence": self.is_evidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvidenceDoc":
        return cls(**d)


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    seq: int
    text: str
    score: float = 0.0


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.5
    b: float = 0.75
    delta: float = 1.0

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0 <= self.b <= 1:
            raise ValueError("b must be in [0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")


@dataclass(frozen=True)
class CompactedContext:
    segments: tuple[tuple[str, str], ...]  # (doc_id, text), stable order
    token_count: int
    evidence_manifest: tuple[str, ...]

    def render(self) -> str:
        return SEGMENT_SEPARATOR.join(text for _, text in self.segments)


def search_web(question: str, provider, n: int = 10) -> list[EvidenceDoc]:
    """Retrieve up to n related articles; fewer results only warn."""
    if not question:
        raise ValueError("question must be non-empty")
    hits = provider.search(question, n)
    docs = []
    for i, hit in enumerate(hits[:n]):
        text = hit.get("text", "")
        if not text:
            continue
        docs.append(
            EvidenceDoc(
                doc_id=hit.get("doc_id", f"web-{i}"),
                origin="web-search",
                title=hit.get("title", ""),
                text=text,
                is_evidence=False,
            )
        )
    if len(docs) < n:
        log.warning("web search returned %d/%d articles for %r", len(docs), n, question[:80])
    return docs


class FixtureSearchProvider:
    """Replays stored JSON search results from a directory.

    Results are keyed by a slug of the query; ``default.json`` answers any
    query without its own file.
    """

    def __init__(self, directory):
        from pathlib import Path

        self.directory = Path(directory)

    def search(self, query: str, n: int) -> list[dict]:
        import json

        slug = re.sub(r"[^a-z0-9]+", "_", query.lower()).strip("_")[:80]
        path = self.directory / f"{slug}.json"
        if not path.exists():
            path = self.directory / "default.json"
        if not path.exists():
            return []
        return json.loads(path.read_text())


def chunk_document(doc: EvidenceDoc, chunk_chars: int = DEFAULT_CHUNK_CHARS) -> list[Chunk]:
    """Greedy splits at <= chunk_chars, preferring the last whitespace in each
    window; concatenating the chunks reconstructs the text exactly."""
    if chunk_chars <= 0:
        raise ValueError("chunk_chars must be positive")
    chunks = []
    text = doc.text
    pos = 0
    seq = 0
    while pos < len(text):
        if len(text) - pos <= chunk_chars:
            piece = text[pos:]
            pos = len(text)
        else:
            window = text[pos : pos + chunk_chars]
            cut = max((window.rfind(ws) for ws in (" ", "\n", "\t")), default=-1)
            cut = cut + 1 if cut > 0 else chunk_chars
            piece = text[pos : pos + cut]
            pos += cut
        chunks.append(Chunk(doc_id=doc.doc_id, seq=seq, text=piece))
        seq += 1
    return chunks


def chunk_by_tokens(doc: EvidenceDoc, chunk_tokens: int = NOISY_CHUNK_TOKENS, counter=None) -> list[Chunk]:
    """Token-budgeted chunking used by the noisy eval mode; lossless."""
    if chunk_tokens <= 0:
        raise ValueError("chunk_tokens must be positive")
    counter = counter or count_tokens
    words = re.split(r"(?<=\s)", doc.text)  # keep separators attached
    chunks = []
    buf: list[str] = []
    used = 0
    seq = 0
    for word in words:
        cost = counter(word)
        if buf and used + cost > chunk_tokens:
            chunks.append(Chunk(doc_id=doc.doc_id, seq=seq, text="".join(buf)))
            seq += 1
            buf, used = [], 0
        buf.append(word)
        used += cost
    if buf:
        chunks.append(Chunk(doc_id=doc.doc_id, seq=seq, text="".join(buf)))
    return chunks


_TERM_RE = re.compile(r"[a-z0-9]+")


def tokenize_terms(text: str) -> list[str]:
    return _TERM_RE.findall(text.lower())


def bm25plus_score(query_terms: Iterable[str], chunks: list[Chunk], params: Bm25Params | None = None) -> list[Chunk]:
    """Score chunks against the query under BM25+.

    score(chunk) = sum over query terms present in the chunk of
    IDF(t) * ((k1+1)*tf / (k1*(1-b+b*len/avglen) + tf) + delta), with
    IDF(t) = ln((N - df + 0.5)/(df + 0.5) + 1). Absent terms contribute 0.
    """
    params = params or Bm25Params()
    if not chunks:
        raise EmptyCorpusError("cannot score an empty chunk corpus")
    term_lists = [tokenize_terms(c.text) for c in chunks]
    n = len(chunks)
    avglen = sum(len(t) for t in term_lists) / n
    query = list(dict.fromkeys(t.lower() for t in query_terms))

    df = {t: 0 for t in query}
    freqs = []
    for terms in term_lists:
        tf = {}
        for t in terms:
            tf[t] = tf.get(t, 0) + 1
        freqs.append(tf)
        for t in query:
            if t in tf:
                df[t] += 1

    scored = []
    for chunk, terms, tf in zip(chunks, term_lists, freqs):
        length = len(terms)
        norm = params.k1 * (1 - params.b + params.b * (length / avglen if avglen > 0 else 0))
        score = 0.0
        for t in query:
            f = tf.get(t, 0)
            if f == 0:
                continue
            idf = math.log((n - df[t] + 0.5) / (df[t] + 0.5) + 1)
            score += idf * ((params.k1 + 1) * f / (norm + f) + params.delta)
        scored.append(Chunk(doc_id=chunk.doc_id, seq=chunk.seq, text=chunk.text, score=score))
    return scored


def rank_key(chunk: Chunk):
    """Stable ranking: score descending, ties by (doc_id, seq)."""
    return (-chunk.score, chunk.doc_id, chunk.seq)


def select_under_budget(
    ranked: list[Chunk],
    budget: int,
    counter: Callable[[str], int],
    has_preceding: bool,
) -> list[Chunk]:
    """Greedy selection in rank order; each chunk costs its text plus the
    segment separator when anything precedes it."""
    selected: list[Chunk] = []
    remaining = budget
    for chunk in ranked:
        prefix = SEGMENT_SEPARATOR if (has_preceding or selected) else ""
        cost = counter(prefix + chunk.text)
        if cost <= remaining:
            selected.append(chunk)
            remaining -= cost
    return selected


def compact_context(
    question: str,
    docs: list[EvidenceDoc],
    budget_tokens: int = TRAIN_CONTEXT_BUDGET,
    counter: Callable[[str], int] | None = None,
    params: Bm25Params | None = None,
    chunk_chars: int = DEFAULT_CHUNK_CHARS,
) -> CompactedContext:
    """Evidence docs whole and first, then top-scored non-evidence chunks.

    Raises EvidenceOverBudgetError when the evidence alone exceeds the budget.
    """
    counter = counter or count_tokens
    evidence = [d for d in docs if d.is_evidence]
    others = [d for d in docs if not d.is_evidence]

    segments: list[tuple[str, str]] = [(d.doc_id, d.text) for d in evidence]
    rendered = SEGMENT_SEPARATOR.join(t for _, t in segments)
    evidence_tokens = counter(rendered)
    if evidence_tokens > budget_tokens:
        raise EvidenceOverBudgetError(
            f"evidence alone is {evidence_tokens} tokens, budget {budget_tokens}"
        )

    chunks: list[Chunk] = []
    for doc in others:
        chunks.extend(chunk_document(doc, chunk_chars))
    if chunks:
        scored = bm25plus_score(tokenize_terms(question), chunks, params)
        ranked = sorted(scored, key=rank_key)
        selected = select_under_budget(
            ranked, budget_tokens - evidence_tokens, counter, has_preceding=bool(segments)
        )
        segments.extend((c.doc_id, c.text) for c in selected)

    rendered = SEGMENT_SEPARATOR.join(t for _, t in segments)
    total = counter(rendered)
    # counters need not be additive over concatenation; trim tail chunks
    # until the full rendering fits the budget
    while total > budget_tokens and len(segments) > len(evidence):
        segments.pop()
        rendered = SEGMENT_SEPARATOR.join(t for _, t in segments)
        total = counter(rendered)
    if total > budget_tokens:
        raise EvidenceOverBudgetError(f"rendered evidence is {total} tokens, budget {budget_tokens}")

    return CompactedContext(
        segments=tuple(segments),
        token_count=total,
        evidence_manifest=tuple(d.doc_id for d in evidence),
    )


def validate_evidence_presence(context: CompactedContext, docs: list[EvidenceDoc]) -> bool:
    """Each evidence doc's full normalized text must appear contiguously in
    the rendered context; an empty evidence set fails."""
    evidence = [d for d in docs if d.is_evidence]
    if not evidence:
        return False
    haystack = normalize_text(context.render())
    return all(normalize_text(d.text) in haystack for d in evidence)


def compact_for_eval(
    context_text: str,
    query: str,
    limit_tokens: int = EVAL_COMPACT_THRESHOLD,
    mode: str = "clean-1024-chars",
    counter: Callable[[str], int] | None = None,
    params: Bm25Params | None = None,
) -> str:
    """Eval-time compaction: unchanged under the limit, BM25+ selection above it."""
    if limit_tokens <= 0:
        raise ValueError("limit_tokens must be positive")
    if mode not in ("clean-1024-chars", "noisy-256-tokens"):
        raise ValueError(f"unknown eval compaction mode: {mode!r}")
    counter = counter or count_tokens
    if counter(context_text) <= limit_tokens:
        return context_text

    doc = EvidenceDoc(doc_id="context", origin="web-search", title="", text=context_text, is_evidence=False)
    if mode == "clean-1024-chars":
        chunks = chunk_document(doc, DEFAULT_CHUNK_CHARS)
    else:
        chunks = chunk_by_tokens(doc, NOISY_CHUNK_TOKENS, counter)

    scored = bm25plus_score(tokenize_terms(query), chunks, params)
    ranked = sorted(scored, key=rank_key)
    selected: list[Chunk] = []
    remaining = limit_tokens
    for chunk in ranked:
        cost = counter((SEGMENT_SEPARATOR if selected else "") + chunk.text)
        if cost <= remaining:
            selected.append(chunk)
            remaining -= cost
    out = SEGMENT_SEPARATOR.join(c.text for c in selected)
    while counter(out) > limit_tokens and selected:
        selected.pop()
        out = SEGMENT_SEPARATOR.join(c.text for c in selected)
    return out
