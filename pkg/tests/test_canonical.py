from hypothesis import given, strategies as st

from tableforge.canonical import (
    CanonicalValue,
    canonicalize,
    normalize_text,
    numeric_payload,
    parse_number,
)


class TestParseNumber:
    def test_plain_int(self):
        assert parse_number("42") == 42

    def test_thousands_separators(self):
        assert parse_number("1,455") == 1455
        assert parse_number("400,000") == 400000

    def test_float(self):
        assert parse_number("83.6") == 83.6

    def test_negative(self):
        assert parse_number("-7") == -7

    def test_not_a_number(self):
        assert parse_number("Espanyol") is None
        assert parse_number("") is None
        assert parse_number("15 days") is None

    def test_bad_separator_grouping_rejected(self):
        assert parse_number("1,23") is None


class TestCanonicalize:
    def test_scalar_number(self):
        v = canonicalize(7)
        assert v.kind == "scalar-number" and v.payload == 7

    def test_numeric_string_becomes_number(self):
        assert canonicalize("1,455").kind == "scalar-number"

    def test_string(self):
        v = canonicalize("  Eritrea ")
        assert v.kind == "scalar-string" and v.payload == "Eritrea"

    def test_single_item_list_folds_to_scalar(self):
        assert canonicalize(["Eritrea"]).kind == "scalar-string"

    def test_list(self):
        v = canonicalize(["Espanyol", "Poli Ejido"])
        assert v.kind == "list" and v.size == 2

    def test_mapping(self):
        v = canonicalize({"team_home": "Poli Ejido", "team_away": "Espanyol"})
        assert v.kind == "mapping" and v.size == 2

    def test_bool_is_string_not_number(self):
        assert canonicalize(True).kind == "scalar-string"

    def test_answer_limit(self):
        assert canonicalize([1, 2, 3]).fits_answer_limit()
        assert not canonicalize([1, 2, 3, 4]).fits_answer_limit()

    @given(
        st.recursive(
            st.one_of(st.integers(), st.floats(allow_nan=False, allow_infinity=False), st.text(max_size=20)),
            lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=5), inner, max_size=4),
            max_leaves=10,
        )
    )
    def test_idempotent(self, value):
        once = canonicalize(value)
        assert canonicalize(once) == once

    def test_round_trip(self):
        v = canonicalize({"a": 1, "b": "x"})
        assert CanonicalValue.from_dict(v.to_dict()) == v


class TestRender:
    def test_integral_float_renders_without_decimal(self):
        assert CanonicalValue("scalar-number", 7.0).render() == "7"

    def test_string_renders_verbatim(self):
        assert CanonicalValue("scalar-string", "Eritrea").render() == "Eritrea"

    def test_mapping_renders_sorted_json(self):
        assert CanonicalValue("mapping", {"b": 1, "a": 2}).render() == '{"a": 2, "b": 1}'


class TestNormalizeText:
    def test_case_and_whitespace(self):
        assert normalize_text("  ESPANYOL  fc ") == "espanyol fc"

    def test_diacritics(self):
        assert normalize_text("Café") == "cafe"

    def test_punctuation_to_space(self):
        assert normalize_text("visa-free (90 days)") == "visa free 90 days"

    @given(st.text(max_size=100))
    def test_idempotent(self, text):
        assert normalize_text(normalize_text(text)) == normalize_text(text)


def test_numeric_payload():
    assert numeric_payload(canonicalize(5)) == 5.0
    assert numeric_payload(canonicalize("5")) == 5.0
    assert numeric_payload(canonicalize("five")) is None
    assert numeric_payload(canonicalize([1, 2])) is None
