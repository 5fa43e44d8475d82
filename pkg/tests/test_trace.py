import pytest

from tableforge.canonical import canonicalize
from tableforge.gateway import Gateway, ScriptedMockProvider
from tableforge.ingest import Cell, make_table
from tableforge.tokens import count_tokens
from tableforge.trace import (
    ReasoningTrace,
    TableLeakError,
    TraceValidationError,
    assert_table_withheld,
    count_steps,
    generate_trace,
    trace_statistics,
    validate_trace,
)

TWO_STEP = "* Step 1: Scan\nLooking at the documents.\n\n* Step 2: Answer Formulation\nThe correct answer is 7."


def make_trace(text, teacher="teacher"):
    return ReasoningTrace(
        text=text, token_count=count_tokens(text), step_count=count_steps(text), teacher_id=teacher
    )


def visa_table():
    rows = [
        (Cell("Eritrea"), Cell("Must have a sponsor who must submit an application at least 48 hours before arrival.")),
        (Cell("Bhutan"), Cell("Application at least 2 and a half months before arrival.")),
    ]
    return make_table("Visa", None, ("Country", "Conditions"), rows)


class TestStepCounting:
    def test_counts_markers(self):
        assert count_steps(TWO_STEP) == 2

    def test_indented_and_spaced_markers(self):
        assert count_steps("  * Step 1: a\n*  Step  2: b") == 2

    def test_prose_mentioning_steps_is_not_a_marker(self):
        assert count_steps("In step 1 we see that...") == 0


class TestSampleTrace:
    def test_reference_trace_passes(self, trace_fixture_text):
        trace = make_trace(trace_fixture_text)
        assert trace.step_count == 7
        validation = validate_trace(trace, canonicalize("Eritrea"))
        assert validation.passed
        assert not validation.warnings  # length sits inside the expected band

    def test_reference_trace_final_step_states_answer(self, trace_fixture_text):
        assert trace_fixture_text.strip().endswith("The correct answer is Eritrea.")


class TestValidate:
    def test_marker_free_trace_cannot_even_be_built(self):
        with pytest.raises(ValueError):
            make_trace("Just a paragraph with no structure at all.")

    def test_final_step_must_state_answer(self):
        validation = validate_trace(make_trace(TWO_STEP), canonicalize("Eritrea"))
        assert not validation.passed
        assert any("answer" in r for r in validation.reasons)

    def test_numeric_answer_matches_normalized(self):
        validation = validate_trace(make_trace(TWO_STEP), canonicalize(7))
        assert validation.passed

    def test_length_outside_band_warns_only(self):
        validation = validate_trace(make_trace(TWO_STEP), canonicalize(7))
        assert validation.passed and validation.warnings


class TestWithholding:
    def test_row_in_prompt_rejected(self):
        table = visa_table()
        prompt = "context... Eritrea Must have a sponsor who must submit an application at least 48 hours before arrival. ...more"
        with pytest.raises(TableLeakError):
            assert_table_withheld(prompt, table)

    def test_prose_overlap_without_full_row_is_fine(self):
        table = visa_table()
        assert_table_withheld("Eritrea requires sponsors. Bhutan requires early applications.", visa_table())

    def test_generate_trace_asserts_withholding(self):
        provider = ScriptedMockProvider()
        provider.script_default("trace_generation", TWO_STEP)
        gw = Gateway(provider)
        table = visa_table()
        leaky_context = " ".join(c.text for c in table.rows[0])
        with pytest.raises(TableLeakError):
            generate_trace("q?", canonicalize(7), leaky_context, gw, table=table)

    def test_generate_trace_happy_path(self):
        provider = ScriptedMockProvider()
        provider.script_default("trace_generation", TWO_STEP)
        gw = Gateway(provider)
        trace = generate_trace("q?", canonicalize(7), "clean prose context", gw, table=visa_table())
        assert trace.step_count == 2

    def test_markerless_response_raises(self):
        provider = ScriptedMockProvider()
        provider.script_default("trace_generation", "no structure")
        gw = Gateway(provider)
        with pytest.raises(TraceValidationError):
            generate_trace("q?", canonicalize(7), "ctx", gw)


class TestStatistics:
    def test_empty(self):
        assert trace_statistics([]) == {"count": 0, "median": None, "histogram": []}

    def test_median_and_count(self):
        stats = trace_statistics([500, 1480, 9000])
        assert stats["median"] == 1480
        assert stats["count"] == 3

    def test_histogram_bins_cover_all_counts(self):
        lengths = [10, 100, 1000, 1480, 5000, 10000]
        stats = trace_statistics(lengths)
        assert sum(b["count"] for b in stats["histogram"]) == len(lengths)


def test_round_trip():
    t = make_trace(TWO_STEP)
    assert ReasoningTrace.from_dict(t.to_dict()) == t
