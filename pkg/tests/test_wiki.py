from pathlib import Path

import pytest

from tableforge.wiki import (
    DisambiguationPageError,
    FixtureWikiClient,
    PageNotFoundError,
    WikiError,
    WikiPage,
    fetch_page,
    slugify_title,
)

FIXTURES = Path(__file__).parent / "fixtures" / "wiki"


def test_slugify():
    assert slugify_title("Visa requirements for Uruguayan citizens") == "Visa_requirements_for_Uruguayan_citizens"
    assert slugify_title("A/B (c)") == "A_B_c"
    assert slugify_title("???") == "untitled"


def test_fixture_client_round_trip():
    client = FixtureWikiClient(FIXTURES)
    page = fetch_page("Eritrea", client)
    assert page.title == "Eritrea"
    assert "Horn of Africa" in page.html
    assert page.metadata["sections"] == ["History", "Geography"]


def test_missing_page():
    client = FixtureWikiClient(FIXTURES)
    with pytest.raises(PageNotFoundError):
        client.get_page("No Such Article")


def test_disambiguation_page_is_refused():
    client = FixtureWikiClient(FIXTURES)
    with pytest.raises(DisambiguationPageError):
        client.get_page("Mercury")


def test_summary_prefers_metadata():
    client = FixtureWikiClient(FIXTURES)
    summary = client.get_summary("Eritrea")
    assert summary.startswith("Eritrea is a country")


def test_summary_falls_back_to_lead_paragraph():
    client = FixtureWikiClient(FIXTURES)
    # the visa page fixture carries no summary field
    summary = client.get_summary("Visa requirements for Uruguayan citizens")
    assert "administrative entry restrictions" in summary


def test_missing_fixture_dir():
    with pytest.raises(WikiError):
        FixtureWikiClient("/nonexistent/dir")


def test_page_validation():
    with pytest.raises(ValueError):
        WikiPage(title="", page_id="1", url="", html="<p>x</p>")
    with pytest.raises(ValueError):
        WikiPage(title="T", page_id="1", url="", html="")


def test_page_serialization_round_trip():
    page = WikiPage(title="T", page_id="9", url="u", html="<p>x</p>", metadata={"sections": ["A"]})
    assert WikiPage.from_dict(page.to_dict()) == page
