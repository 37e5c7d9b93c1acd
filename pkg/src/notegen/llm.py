"""Chat-completion backends and the prompt templates of the generation flow.

Two backends share one budget-gated, transcript-keeping base: an HTTP client
for chat-completions-style inference servers, and a scripted mock that makes
every pipeline test deterministic. Templates are plain brace-slot strings so
a config file can swap in different wording without code changes.
"""

import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import requests

from .condense import HeuristicTokenizer, Tokenizer
from .errors import BudgetError, ProtocolError, RenderError, ScriptError, TransportError

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")

TEMPLATE_IDS = (
    "chief_complaints",
    "summarize_initial",
    "summarize_refine",
    "generate_note",
)


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown chat role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class LlmRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    max_tokens: int
    temperature: float = 0.0
    request_id: str = ""
    # Which template produced the messages; used by the mock's matchers and
    # kept in the transcript for audit.
    template_id: str = ""

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    def prompt_text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class LlmResponse:
    text: str
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None
    latency_ms: int = 0


@dataclass(frozen=True)
class TranscriptEntry:
    request: LlmRequest
    response: Optional[LlmResponse] = None
    error: Optional[str] = None


_SLOT = re.compile(r"\{([a-z_]+)\}")

_DEFAULT_SYSTEM = (
    "You are a clinical documentation assistant helping an ICU physician "
    "keep progress notes current."
)

_TEMPLATE_SEPARATOR = "\n---\n"


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system_text: str
    user_text: str

    @classmethod
    def from_text(cls, template_id: str, text: str) -> "PromptTemplate":
        """Parse an override file: optional system part, '---' line, user
        part. Without the separator the whole text is the user prompt."""
        if _TEMPLATE_SEPARATOR in text:
            system_text, user_text = text.split(_TEMPLATE_SEPARATOR, 1)
        else:
            system_text, user_text = _DEFAULT_SYSTEM, text
        return cls(
            template_id=template_id,
            system_text=system_text.strip(),
            user_text=user_text.strip(),
        )

    def render(self, slots: Mapping[str, str]) -> list[ChatMessage]:
        def substitute(text: str) -> str:
            def repl(match: re.Match) -> str:
                name = match.group(1)
                value = slots.get(name, "")
                if not value:
                    raise RenderError(
                        f"template {self.template_id!r} needs a non-empty "
                        f"value for slot '{name}'"
                    )
                return value

            return _SLOT.sub(repl, text)

        return [
            ChatMessage("system", substitute(self.system_text)),
            ChatMessage("user", substitute(self.user_text)),
        ]


_DEFAULT_TEMPLATES = {
    "chief_complaints": PromptTemplate(
        "chief_complaints",
        _DEFAULT_SYSTEM,
        "Read the assessment and plan from the patient's prior progress note "
        "and list the current chief complaints it addresses. Reply with a "
        "short semicolon-separated list of complaints and nothing else.\n\n"
        "Prior assessment and plan:\n{prior_aandp}",
    ),
    "summarize_initial": PromptTemplate(
        "summarize_initial",
        _DEFAULT_SYSTEM,
        "The patient's chief complaints are: {complaints}.\n\n"
        "Summarize the clinically relevant findings in the chart data below "
        "as one concise paragraph, focusing on changes that matter for those "
        "complaints.\n\nChart data:\n{chunk}",
    ),
    "summarize_refine": PromptTemplate(
        "summarize_refine",
        _DEFAULT_SYSTEM,
        "The patient's chief complaints are: {complaints}.\n\n"
        "Here is the chart summary so far:\n{previous_summary}\n\n"
        "Refine that summary using the additional chart data below. Keep it "
        "a single concise paragraph and drop nothing clinically important."
        "\n\nAdditional chart data:\n{chunk}",
    ),
    "generate_note": PromptTemplate(
        "generate_note",
        _DEFAULT_SYSTEM,
        "Write the assessment and plan section of the patient's next "
        "progress note.\n\nPrior assessment and plan:\n{prior_aandp}\n\n"
        "Summary of interim chart data:\n{summary}\n\n"
        "Reply with the new assessment and plan text only.",
    ),
}


class PromptLibrary:
    """The four templates of the flow, with optional per-id overrides."""

    def __init__(self, templates: Optional[Mapping[str, PromptTemplate]] = None):
        merged = dict(_DEFAULT_TEMPLATES)
        if templates:
            for template_id, template in templates.items():
                if template_id not in TEMPLATE_IDS:
                    raise RenderError(f"unknown template id {template_id!r}")
                merged[template_id] = template
        self._templates = merged

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise RenderError(f"unknown template id {template_id!r}") from None

    def render(self, template_id: str, slots: Mapping[str, str]) -> list[ChatMessage]:
        return self.get(template_id).render(slots)


def render_prompt(
    template_id: str,
    slots: Mapping[str, str],
    library: Optional[PromptLibrary] = None,
) -> list[ChatMessage]:
    return (library or PromptLibrary()).render(template_id, slots)


class Backend:
    """Shared budget gate, bounded concurrency, synchronized transcript.

    Subclasses implement _send(). Every complete() call lands in the
    transcript, failures included, so transcript length always equals the
    invocation count.
    """

    def __init__(
        self,
        context_size: int = 2048,
        tokenizer: Optional[Tokenizer] = None,
        max_in_flight: int = 4,
    ):
        if context_size < 1:
            raise ValueError("context_size must be positive")
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be positive")
        self.context_size = context_size
        self.tokenizer = tokenizer or HeuristicTokenizer()
        self._gate = threading.Semaphore(max_in_flight)
        self._lock = threading.Lock()
        self._transcript: list[TranscriptEntry] = []

    @property
    def transcript(self) -> tuple[TranscriptEntry, ...]:
        with self._lock:
            return tuple(self._transcript)

    def _record(self, entry: TranscriptEntry) -> None:
        with self._lock:
            self._transcript.append(entry)

    def describe(self) -> str:
        return type(self).__name__

    def complete(self, request: LlmRequest) -> LlmResponse:
        estimate = self.tokenizer.estimate(request.prompt_text())
        if estimate + request.max_tokens > self.context_size:
            error = BudgetError(
                f"prompt estimate {estimate} + max_tokens {request.max_tokens} "
                f"exceeds context size {self.context_size}"
            )
            self._record(TranscriptEntry(request, error=str(error)))
            raise error
        with self._gate:
            try:
                response = self._send(request)
            except Exception as exc:
                self._record(TranscriptEntry(request, error=str(exc)))
                raise
        self._record(TranscriptEntry(request, response=response))
        return response

    def _send(self, request: LlmRequest) -> LlmResponse:
        raise NotImplementedError


def complete(backend: Backend, request: LlmRequest) -> LlmResponse:
    return backend.complete(request)


@dataclass(frozen=True)
class ScriptEntry:
    response: str
    template_id: Optional[str] = None
    contains: Optional[str] = None

    def matches(self, request: LlmRequest) -> bool:
        if self.template_id is not None and self.template_id != request.template_id:
            return False
        if self.contains is not None and self.contains not in request.prompt_text():
            return False
        return True


def load_script(path) -> list[ScriptEntry]:
    """Read a mock script: a JSON array of {template_id?, contains?,
    response} objects, first match wins."""
    with open(path, encoding="utf-8") as handle:
        raw = json.load(handle)
    if not isinstance(raw, list):
        raise ScriptError(f"mock script {path} must be a JSON array")
    entries = []
    for index, item in enumerate(raw):
        if not isinstance(item, dict) or "response" not in item:
            raise ScriptError(f"mock script entry {index} needs a 'response' key")
        entries.append(
            ScriptEntry(
                response=item["response"],
                template_id=item.get("template_id"),
                contains=item.get("contains"),
            )
        )
    return entries


class MockBackend(Backend):
    """Deterministic scripted backend: a pure function of (script, request)."""

    def __init__(self, script: Sequence[ScriptEntry], **kwargs):
        super().__init__(**kwargs)
        self.script = tuple(script)

    def describe(self) -> str:
        return f"mock({len(self.script)} entries)"

    def _send(self, request: LlmRequest) -> LlmResponse:
        for entry in self.script:
            if entry.matches(request):
                return LlmResponse(
                    text=entry.response,
                    prompt_tokens=self.tokenizer.estimate(request.prompt_text()),
                    completion_tokens=self.tokenizer.estimate(entry.response),
                    latency_ms=0,
                )
        raise ScriptError(
            f"no script entry matches request {request.request_id!r} "
            f"(template {request.template_id!r})"
        )


# Statuses worth retrying: server-side hiccups and rate limits.
_TRANSIENT_STATUSES = frozenset({429, 500, 502, 503, 504})


class HttpBackend(Backend):
    """Client for a chat-completions endpoint: POST {base}/chat/completions
    with model/messages/max_tokens/temperature, read choices[0].message.

    Transient failures (connection errors, timeouts, 5xx/429) retry with
    exponential backoff up to `retries` extra attempts; anything else fails
    fast as a protocol error.
    """

    def __init__(
        self,
        base_url: str,
        auth_token: Optional[str] = None,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
        session: Optional[requests.Session] = None,
        **kwargs,
    ):
        super().__init__(**kwargs)
        self.base_url = base_url.rstrip("/")
        self.auth_token = auth_token
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._session = session or requests.Session()

    def describe(self) -> str:
        return f"http({self.base_url})"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        return headers

    def _send(self, request: LlmRequest) -> LlmResponse:
        payload = {
            "model": request.model,
            "messages": [
                {"role": m.role, "content": m.content} for m in request.messages
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        url = f"{self.base_url}/chat/completions"
        attempts = self.retries + 1
        last_failure = "no attempt made"
        started = time.monotonic()
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                http_response = self._session.post(
                    url, json=payload, headers=self._headers(), timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_failure = f"{type(exc).__name__}: {exc}"
                logger.warning(
                    "request %s attempt %d/%d failed: %s",
                    request.request_id, attempt + 1, attempts, last_failure,
                )
                continue
            status = http_response.status_code
            if status in _TRANSIENT_STATUSES:
                last_failure = f"status {status}"
                logger.warning(
                    "request %s attempt %d/%d got transient status %d",
                    request.request_id, attempt + 1, attempts, status,
                )
                continue
            if not 200 <= status < 300:
                raise ProtocolError(status, http_response.text[:200])
            return self._parse(http_response, started)
        raise TransportError(
            f"request {request.request_id!r} failed after {attempts} attempts; "
            f"last failure: {last_failure}"
        )

    def _parse(self, http_response, started: float) -> LlmResponse:
        try:
            body = http_response.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise ProtocolError(
                http_response.status_code, http_response.text[:200]
            ) from None
        usage = body.get("usage") or {}
        return LlmResponse(
            text=text,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
            latency_ms=int((time.monotonic() - started) * 1000),
        )
