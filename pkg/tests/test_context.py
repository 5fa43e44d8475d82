import math

import pytest
from hypothesis import given, settings, strategies as st

from tableforge import context as ctx
from tableforge.canonical import normalize_text


def doc(doc_id, text, evidence=False):
    return ctx.EvidenceDoc(
        doc_id=doc_id,
        origin="wiki-evidence" if evidence else "web-search",
        title=doc_id,
        text=text,
        is_evidence=evidence,
    )


WORDS = st.text(alphabet="abcdefgh ", min_size=1, max_size=200)


class TestChunking:
    @given(WORDS, st.integers(5, 64))
    def test_char_chunking_is_lossless(self, text, size):
        chunks = ctx.chunk_document(doc("d", text), chunk_chars=size)
        assert "".join(c.text for c in chunks) == text
        assert all(len(c.text) <= size for c in chunks)

    def test_prefers_whitespace_cuts(self):
        text = "alpha beta gamma delta"
        chunks = ctx.chunk_document(doc("d", text), chunk_chars=12)
        assert chunks[0].text == "alpha beta "

    def test_seq_numbers_are_ordered(self):
        chunks = ctx.chunk_document(doc("d", "x" * 100), chunk_chars=10)
        assert [c.seq for c in chunks] == list(range(10))

    @given(WORDS, st.integers(3, 40))
    def test_token_chunking_is_lossless(self, text, size):
        chunks = ctx.chunk_by_tokens(doc("d", text), chunk_tokens=size)
        assert "".join(c.text for c in chunks) == text


def brute_force_bm25plus(query_terms, chunks, params=None):
    """Independent reimplementation used as the scoring oracle."""
    params = params or ctx.Bm25Params()
    term_lists = [ctx.tokenize_terms(c.text) for c in chunks]
    n = len(chunks)
    avglen = sum(map(len, term_lists)) / n
    out = []
    for terms in term_lists:
        score = 0.0
        for t in dict.fromkeys(q.lower() for q in query_terms):
            tf = terms.count(t)
            if tf == 0:
                continue
            df = sum(1 for other in term_lists if t in other)
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1)
            denom = params.k1 * (1 - params.b + params.b * len(terms) / avglen) + tf
            score += idf * ((params.k1 + 1) * tf / denom + params.delta)
        out.append(score)
    return out


class TestBm25Plus:
    def test_matching_chunk_outranks_nonmatching(self):
        chunks = [
            ctx.Chunk("a", 0, "visa sponsor arrival requirements"),
            ctx.Chunk("b", 0, "completely unrelated ski racing text"),
        ]
        scored = ctx.bm25plus_score(["visa", "sponsor"], chunks)
        assert scored[0].score > scored[1].score

    def test_absent_terms_contribute_zero(self):
        chunks = [ctx.Chunk("a", 0, "nothing matches here")]
        scored = ctx.bm25plus_score(["zebra"], chunks)
        assert scored[0].score == 0.0

    def test_empty_corpus_raises(self):
        with pytest.raises(ctx.EmptyCorpusError):
            ctx.bm25plus_score(["q"], [])

    def test_default_parameters(self):
        p = ctx.Bm25Params()
        assert (p.k1, p.b, p.delta) == (1.5, 0.75, 1.0)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            ctx.Bm25Params(k1=0)
        with pytest.raises(ValueError):
            ctx.Bm25Params(b=1.5)
        with pytest.raises(ValueError):
            ctx.Bm25Params(delta=-0.1)

    @settings(max_examples=60)
    @given(
        st.lists(st.text(alphabet="abcde ", min_size=1, max_size=30), min_size=1, max_size=20),
        st.lists(st.sampled_from("abcde"), min_size=1, max_size=8),
    )
    def test_matches_brute_force(self, texts, query):
        chunks = [ctx.Chunk(f"d{i}", 0, t) for i, t in enumerate(texts)]
        got = [c.score for c in ctx.bm25plus_score(query, chunks)]
        want = brute_force_bm25plus(query, chunks)
        assert all(abs(g - w) <= 1e-9 for g, w in zip(got, want))

    def test_rank_ties_break_by_doc_then_seq(self):
        chunks = [ctx.Chunk("b", 1, "same text"), ctx.Chunk("a", 0, "same text"), ctx.Chunk("a", 1, "same text")]
        scored = ctx.bm25plus_score(["same"], chunks)
        ordered = sorted(scored, key=ctx.rank_key)
        assert [(c.doc_id, c.seq) for c in ordered] == [("a", 0), ("a", 1), ("b", 1)]


class TestCompaction:
    def corpus(self):
        evidence = [doc("wiki:main", "sponsor visa arrival " * 30, evidence=True)]
        fillers = [doc(f"web-{i}", f"article {i} " + "filler words here " * 50) for i in range(5)]
        return evidence, fillers

    def test_evidence_first_and_whole(self):
        evidence, fillers = self.corpus()
        compacted = ctx.compact_context("sponsor visa", evidence + fillers, budget_tokens=500)
        assert compacted.segments[0][0] == "wiki:main"
        assert compacted.segments[0][1] == evidence[0].text
        assert compacted.evidence_manifest == ("wiki:main",)

    def test_budget_respected(self):
        evidence, fillers = self.corpus()
        for budget in (150, 300, 800):
            compacted = ctx.compact_context("sponsor visa", evidence + fillers, budget_tokens=budget)
            assert compacted.token_count <= budget

    def test_evidence_over_budget_raises(self):
        evidence, fillers = self.corpus()
        with pytest.raises(ctx.EvidenceOverBudgetError):
            ctx.compact_context("q", evidence + fillers, budget_tokens=10)

    def test_presence_check(self):
        evidence, fillers = self.corpus()
        compacted = ctx.compact_context("sponsor visa", evidence + fillers, budget_tokens=400)
        assert ctx.validate_evidence_presence(compacted, evidence + fillers)

    def test_presence_check_fails_without_evidence(self):
        compacted = ctx.CompactedContext(segments=(("a", "text"),), token_count=1, evidence_manifest=())
        assert not ctx.validate_evidence_presence(compacted, [doc("a", "text")])

    def test_presence_check_detects_truncation(self):
        evidence = [doc("e", "the full evidence body with many words", evidence=True)]
        compacted = ctx.CompactedContext(segments=(("e", "the full evidence"),), token_count=3, evidence_manifest=("e",))
        assert not ctx.validate_evidence_presence(compacted, evidence)

    def test_higher_scoring_chunks_selected_first(self):
        evidence = [doc("e", "anchor", evidence=True)]
        relevant = doc("rel", "sponsor visa sponsor visa arrival")
        irrelevant = doc("irr", "nothing in common with the query")
        compacted = ctx.compact_context(
            "sponsor visa arrival", evidence + [irrelevant, relevant], budget_tokens=20
        )
        ids = [s[0] for s in compacted.segments]
        assert "rel" in ids


def test_search_web_caps_and_warns(caplog):
    class Five:
        def search(self, query, n):
            return [{"doc_id": f"d{i}", "title": "t", "text": "body"} for i in range(5)]

    docs = ctx.search_web("question", Five(), n=10)
    assert len(docs) == 5
    assert all(not d.is_evidence for d in docs)


def test_fixture_search_provider(search_dir):
    provider = ctx.FixtureSearchProvider(search_dir)
    hits = provider.search("anything at all", 10)
    assert len(hits) == 10
    docs = ctx.search_web("anything at all", provider, n=10)
    assert len(docs) == 10


class TestEvalCompaction:
    def test_short_context_unchanged(self):
        text = "short context body"
        assert ctx.compact_for_eval(text, "query", limit_tokens=1000) == text

    def test_long_context_reduced_under_limit(self):
        text = ("sponsor visa arrival rules " * 40 + "unrelated padding words " * 400)
        out = ctx.compact_for_eval(text, "sponsor visa", limit_tokens=200)
        from tableforge.tokens import count_tokens

        assert count_tokens(out) <= 200
        assert "sponsor" in out

    def test_noisy_mode(self):
        text = "sponsor visa arrival " * 300
        out = ctx.compact_for_eval(text, "sponsor", limit_tokens=120, mode="noisy-256-tokens")
        from tableforge.tokens import count_tokens

        assert count_tokens(out) <= 120

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            ctx.compact_for_eval("text", "q", limit_tokens=10, mode="other")

    def test_eval_threshold_constant(self):
        assert ctx.EVAL_COMPACT_THRESHOLD == math.floor(0.66 * 131072) == 86507


def test_train_budget_constant():
    assert ctx.TRAIN_CONTEXT_BUDGET == 96_000
