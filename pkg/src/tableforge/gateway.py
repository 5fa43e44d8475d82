"""Uniform access to chat-completion providers.

Every LLM call in the pipeline goes through ``render_prompt`` + ``complete``:
templates are loaded from the packaged ``prompts/`` directory, providers are
pluggable, and a deterministic mock provider supports fully offline runs.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol

from .tokens import count_tokens

log = logging.getLogger(__name__)

_SLOT_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


class GatewayError(Exception):
    pass


class MissingSlotError(GatewayError):
    def __init__(self, missing: list[str]):
        super().__init__(f"missing template slots: {', '.join(sorted(missing))}")
        self.missing = sorted(missing)


class AuthError(GatewayError):
    """Non-retriable provider failure."""


class TransientError(GatewayError):
    """Retriable provider failure (rate limit, 5xx, timeouts)."""


class RetriesExhaustedError(GatewayError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def slots(self) -> set[str]:
        return set(_SLOT_RE.findall(self.body))


@dataclass(frozen=True)
class ChatRequest:
    template_name: str
    rendered_prompt: str
    temperature: float = 1.0
    reasoning_effort: str = "none"  # low | high | none
    max_output_tokens: int = 8192
    seed: int | None = None

    def __post_init__(self):
        if not self.rendered_prompt:
            raise ValueError("rendered_prompt must be non-empty")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.reasoning_effort not in ("low", "high", "none"):
            raise ValueError(f"unknown reasoning effort: {self.reasoning_effort!r}")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    input_tokens: int
    output_tokens: int
    provider_id: str


def load_templates(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Load prompt templates, one ``<name>.txt`` file per template."""
    templates: dict[str, PromptTemplate] = {}
    if directory is None:
        root = resources.files("tableforge").joinpath("prompts")
        for entry in root.iterdir():
            if entry.name.endswith(".txt"):
                name = entry.name[: -len(".txt")]
                templates[name] = PromptTemplate(name, entry.read_text())
    else:
        for path in sorted(Path(directory).glob("*.txt")):
            templates[path.stem] = PromptTemplate(path.stem, path.read_text())
    return templates


def template_checksums(templates: dict[str, PromptTemplate]) -> dict[str, str]:
    return {
        name: hashlib.sha256(tpl.body.encode("utf-8")).hexdigest()
        for name, tpl in templates.items()
    }


def render_prompt(template: PromptTemplate, slots: dict[str, str]) -> str:
    """Substitute named slots; refuse to render with any slot missing."""
    wanted = template.slots
    missing = wanted - set(slots)
    if missing:
        raise MissingSlotError(sorted(missing))

    def repl(m: re.Match) -> str:
        name = m.group(1)
        return str(slots[name]) if name in wanted else m.group(0)

    return _SLOT_RE.sub(repl, template.body)


class Provider(Protocol):
    provider_id: str

    def send(self, request: ChatRequest) -> str: ...


@dataclass
class CallRecord:
    call_id: int
    template_name: str
    prompt_sha: str
    attempts: int
    ok: bool
    provider_id: str


class TokenBucket:
    """Simple token-bucket rate limiter, safe for concurrent use."""

    def __init__(self, rate_per_s: float = 0.0, burst: int = 1):
        self.rate = rate_per_s
        self.burst = max(1, burst)
        self._tokens = float(self.burst)
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.burst, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            time.sleep(wait)


class Gateway:
    """Templated completion with retries, rate limiting and a call log."""

    MAX_TRIES = 5

    def __init__(
        self,
        provider: Provider,
        templates: dict[str, PromptTemplate] | None = None,
        rate_per_s: float = 0.0,
        backoff_base_s: float = 0.25,
        sleep=time.sleep,
    ):
        self.provider = provider
        self.templates = templates if templates is not None else load_templates()
        self.call_log: list[CallRecord] = []
        self._ids = itertools.count(1)
        self._bucket = TokenBucket(rate_per_s)
        self._backoff = backoff_base_s
        self._sleep = sleep
        self._lock = threading.Lock()

    def render(self, template_name: str, slots: dict[str, str]) -> str:
        return render_prompt(self.templates[template_name], slots)

    def ask(self, template_name: str, slots: dict[str, str], **req_kwargs) -> ChatResponse:
        prompt = self.render(template_name, slots)
        request = ChatRequest(template_name=template_name, rendered_prompt=prompt, **req_kwargs)
        return self.complete(request)

    def complete(self, request: ChatRequest) -> ChatResponse:
        prompt_sha = hashlib.sha256(request.rendered_prompt.encode("utf-8")).hexdigest()[:16]
        attempts = 0
        last_exc: Exception | None = None
        for attempt in range(self.MAX_TRIES):
            attempts += 1
            self._bucket.acquire()
            try:
                text = self.provider.send(request)
            except AuthError:
                self._record(request, prompt_sha, attempts, ok=False)
                raise
            except TransientError as exc:
                last_exc = exc
                if attempt < self.MAX_TRIES - 1:
                    self._sleep(self._backoff * (2**attempt))
                continue
            response = ChatResponse(
                text=text,
                input_tokens=count_tokens(request.rendered_prompt),
                output_tokens=count_tokens(text),
                provider_id=self.provider.provider_id,
            )
            self._record(request, prompt_sha, attempts, ok=True)
            return response
        self._record(request, prompt_sha, attempts, ok=False)
        raise RetriesExhaustedError(f"provider failed after {attempts} tries") from last_exc

    def _record(self, request: ChatRequest, prompt_sha: str, attempts: int, ok: bool) -> None:
        with self._lock:
            self.call_log.append(
                CallRecord(
                    call_id=next(self._ids),
                    template_name=request.template_name,
                    prompt_sha=prompt_sha,
                    attempts=attempts,
                    ok=ok,
                    provider_id=self.provider.provider_id,
                )
            )


class ScriptedMockProvider:
    """Deterministic offline provider keyed on (template_name, prompt hash).

    Responses are scripted either exactly (per prompt) or per template as a
    FIFO queue / constant. Identical prompts always get identical responses.
    """

    provider_id = "mock"

    def __init__(self):
        self._exact: dict[tuple[str, str], str] = {}
        self._by_template: dict[str, list[str]] = {}
        self._default: dict[str, str] = {}
        self.calls: dict[str, int] = {}

    @staticmethod
    def _key(template_name: str, prompt: str) -> tuple[str, str]:
        return template_name, hashlib.sha256(prompt.encode("utf-8")).hexdigest()

    def script_exact(self, template_name: str, prompt: str, response: str) -> None:
        self._exact[self._key(template_name, prompt)] = response

    def script(self, template_name: str, *responses: str) -> None:
        self._by_template.setdefault(template_name, []).extend(responses)

    def script_default(self, template_name: str, response: str) -> None:
        self._default[template_name] = response

    def call_count(self, template_name: str) -> int:
        return self.calls.get(template_name, 0)

    def send(self, request: ChatRequest) -> str:
        name = request.template_name
        self.calls[name] = self.calls.get(name, 0) + 1
        key = self._key(name, request.rendered_prompt)
        if key in self._exact:
            return self._exact[key]
        queue = self._by_template.get(name)
        if queue:
            return queue.pop(0)
        if name in self._default:
            return self._default[name]
        raise AuthError(f"mock has no scripted response for template {name!r}")


class FlakyProvider:
    """Wraps a provider, failing transiently the first ``n_failures`` calls."""

    def __init__(self, inner: Provider, n_failures: int):
        self.inner = inner
        self.provider_id = inner.provider_id
        self.remaining = n_failures

    def send(self, request: ChatRequest) -> str:
        if self.remaining > 0:
            self.remaining -= 1
            raise TransientError("injected transient failure")
        return self.inner.send(request)


@dataclass
class ProviderConfig:
    provider_id: str
    base_url: str
    model: str
    api_key_env: str = "FORGE_API_KEY"
    timeout_s: float = 120.0

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderConfig":
        return cls(**d)


class HttpChatProvider:
    """OpenAI-compatible chat-completions provider over HTTPS."""

    def __init__(self, config: ProviderConfig):
        self.config = config
        self.provider_id = config.provider_id

    def send(self, request: ChatRequest) -> str:
        import requests

        api_key = os.environ.get(self.config.api_key_env, "")
        if not api_key:
            raise AuthError(f"credential env var {self.config.api_key_env} is not set")
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        if request.reasoning_effort != "none":
            payload["reasoning_effort"] = request.reasoning_effort
        try:
            resp = requests.post(
                self.config.base_url.rstrip("/") + "/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.config.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransientError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"auth failure: {resp.status_code}")
        if resp.status_code >= 400:
            raise TransientError(f"provider error: {resp.status_code} {resp.text[:200]}")
        body = resp.json()
        return body["choices"][0]["message"]["content"]
