"""Wikipedia page access.

Two backends share one interface: a live MediaWiki Action API client and a
replay client that reads stored JSON page dumps from a directory (used for
offline, deterministic runs and tests).
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)


class WikiError(Exception):
    pass


class PageNotFoundError(WikiError):
    pass


class DisambiguationPageError(WikiError):
    """Signals the caller to skip this page."""


class WikiTransientError(WikiError):
    """Network-level failure, safe to retry."""


@dataclass(frozen=True)
class WikiPage:
    title: str
    page_id: str
    url: str
    html: str
    metadata: dict = field(default_factory=dict)
    fetched_at: str = ""

    def __post_init__(self):
        if not self.title:
            raise ValueError("title must be non-empty")
        if not self.html:
            raise ValueError("html must be non-empty")
        sections = self.metadata.get("sections", [])
        if not isinstance(sections, list):
            raise ValueError("metadata sections must be an ordered list")

    @property
    def hatnotes(self) -> list[str]:
        return list(self.metadata.get("hatnotes", []))

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "page_id": self.page_id,
            "url": self.url,
            "html": self.html,
            "metadata": self.metadata,
            "fetched_at": self.fetched_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WikiPage":
        return cls(
            title=d["title"],
            page_id=str(d["page_id"]),
            url=d.get("url", ""),
            html=d["html"],
            metadata=d.get("metadata", {}),
            fetched_at=d.get("fetched_at", ""),
        )


def slugify_title(title: str) -> str:
    slug = re.sub(r"[^A-Za-z0-9]+", "_", title).strip("_")
    return slug or "untitled"


def _check_disambiguation(page: WikiPage) -> WikiPage:
    if page.metadata.get("disambiguation") or "class=\"disambiguation\"" in page.html:
        raise DisambiguationPageError(page.title)
    return page


class FixtureWikiClient:
    """Replays stored JSON page dumps from a directory, keyed by title slug."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise WikiError(f"fixture directory not found: {directory}")

    def get_page(self, title: str) -> WikiPage:
        if not title:
            raise ValueError("title must be non-empty")
        path = self.directory / f"{slugify_title(title)}.json"
        if not path.exists():
            raise PageNotFoundError(title)
        data = json.loads(path.read_text())
        return _check_disambiguation(WikiPage.from_dict(data))

    def get_summary(self, title: str) -> str:
        page = self.get_page(title)
        summary = page.metadata.get("summary", "")
        if summary:
            return summary
        from .htmltext import html_to_text

        text = html_to_text(page.html)
        return text.split("\n\n")[0] if text else ""


class MediaWikiClient:
    """MediaWiki Action API client with internal rate limiting.

    Safe for concurrent use: requests are serialized through a lock so the
    configured request interval is honored across threads.
    """

    def __init__(
        self,
        api_url: str = "https://en.wikipedia.org/w/api.php",
        min_interval_s: float = 0.1,
        user_agent: str = "tableforge/0.1 (data curation pipeline)",
        timeout_s: float = 30.0,
    ):
        self.api_url = api_url
        self.min_interval_s = min_interval_s
        self.timeout_s = timeout_s
        self._lock = threading.Lock()
        self._last_request = 0.0
        import requests

        self._session = requests.Session()
        self._session.headers["User-Agent"] = user_agent

    def _get(self, params: dict) -> dict:
        import requests

        with self._lock:
            wait = self.min_interval_s - (time.monotonic() - self._last_request)
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()
        try:
            resp = self._session.get(self.api_url, params=params, timeout=self.timeout_s)
            resp.raise_for_status()
            return resp.json()
        except requests.RequestException as exc:
            raise WikiTransientError(str(exc)) from exc

    def get_page(self, title: str) -> WikiPage:
        if not title:
            raise ValueError("title must be non-empty")
        data = self._get(
            {
                "action": "parse",
                "page": title,
                "prop": "text|sections|properties|displaytitle",
                "format": "json",
                "formatversion": "2",
            }
        )
        if "error" in data:
            raise PageNotFoundError(title)
        parsed = data["parse"]
        props = {p["name"]: p.get("*", "") for p in parsed.get("properties", [])} if isinstance(
            parsed.get("properties"), list
        ) else parsed.get("properties", {})
        metadata = {
            "sections": [s.get("line", "") for s in parsed.get("sections", [])],
            "hatnotes": [],
            "disambiguation": "disambiguation" in props,
        }
        html = parsed["text"] if isinstance(parsed["text"], str) else parsed["text"].get("*", "")
        page = WikiPage(
            title=parsed.get("title", title),
            page_id=str(parsed.get("pageid", "")),
            url=f"https://en.wikipedia.org/wiki/{title.replace(' ', '_')}",
            html=html,
            metadata=metadata,
            fetched_at=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        )
        return _check_disambiguation(page)

    def get_summary(self, title: str) -> str:
        data = self._get(
            {
                "action": "query",
                "titles": title,
                "prop": "extracts",
                "exintro": "1",
                "explaintext": "1",
                "format": "json",
                "formatversion": "2",
            }
        )
        pages = data.get("query", {}).get("pages", [])
        if not pages or pages[0].get("missing"):
            raise PageNotFoundError(title)
        return pages[0].get("extract", "")


def fetch_page(title: str, client) -> WikiPage:
    """Retrieve one page (html + metadata) through the configured client."""
    if not title:
        raise ValueError("title must be non-empty")
    return client.get_page(title)
