"""Text-generation boundary: scripted, replay, and remote HTTP backends.

Every backend answers the same ``generate(ProviderRequest)`` call, so a
session that runs against the remote backend runs unchanged against the
deterministic ones.  The ``directive`` field of a request is a compact
action token (``open``, ``passage``, ``ask:0``, ``prompt:Ethan``, ``hint``,
``reveal:0``, ``wrapup``, ``feedback:Ethan``); scripted and replay backends
key off it directly, while the remote backend expands it into a short
natural-language instruction appended to the chat messages.

Replay script files are JSON, versioned::

    {"version": 1, "records": [{"match": "ask:*", "response": "..."}]}

``match`` is a glob over the directive, or ``role:<role>`` to match the role
of the last chat message instead.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field, replace
from fnmatch import fnmatch
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests


class ProviderError(Exception):
    """Base class for generation failures."""


class ProviderTimeout(ProviderError):
    """The backend did not answer within the configured deadline."""


class RemoteError(ProviderError):
    """The remote backend returned a non-success status."""

    def __init__(self, status: int, body_excerpt: str) -> None:
        super().__init__(f"remote backend returned {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class ScriptExhausted(ProviderError):
    """A scripted/replay backend ran out of responses (test misconfiguration)."""


@dataclass(frozen=True)
class Message:
    role: str  # "moderator" | "student" | "system"
    name: str
    text: str


@dataclass(frozen=True)
class ProviderRequest:
    system_prompt: str
    messages: tuple[Message, ...]
    directive: str
    max_output_tokens: int = 512


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    latency_seconds: float
    provider_tag: str


class Provider:
    """Base backend; subclasses implement ``_complete``."""

    tag = "provider"

    def generate(self, request: ProviderRequest) -> ProviderResponse:
        start = time.monotonic()
        text = self._complete(request)
        return ProviderResponse(
            text=text,
            latency_seconds=time.monotonic() - start,
            provider_tag=self.tag,
        )

    def _complete(self, request: ProviderRequest) -> str:
        raise NotImplementedError


def _fill(template: str, directive: str) -> str:
    """Substitute the directive tail into a scripted response template."""
    tail = directive.split(":", 1)[1] if ":" in directive else ""
    return (
        template.replace("{directive}", directive)
        .replace("{name}", tail)
        .replace("{index}", tail)
    )


class ScriptedProvider(Provider):
    """Pure table lookup: directive -> response.

    Lookup order: exact directive key, then a ``head:*`` wildcard key, then
    the ``default`` (a template string or a callable on the request).
    Responses may embed ``{name}``/``{index}``/``{directive}`` placeholders
    filled from the directive tail.
    """

    tag = "scripted"

    def __init__(
        self,
        responses: Optional[dict[str, str]] = None,
        default: str | Callable[[ProviderRequest], str] | None = None,
    ) -> None:
        self.responses = dict(responses or {})
        self.default = default

    def _complete(self, request: ProviderRequest) -> str:
        directive = request.directive
        if directive in self.responses:
            return _fill(self.responses[directive], directive)
        head = directive.split(":", 1)[0]
        wildcard = f"{head}:*"
        if wildcard in self.responses:
            return _fill(self.responses[wildcard], directive)
        if callable(self.default):
            return self.default(request)
        if self.default is not None:
            return _fill(self.default, directive)
        raise ScriptExhausted(f"no scripted response for directive {directive!r}")


@dataclass(frozen=True)
class ReplayRecord:
    match: str
    response: str


class ReplayProvider(Provider):
    """Plays back an ordered list of recorded responses.

    Each call consumes the next record; its ``match`` pattern must accept
    the incoming request, otherwise the replay is out of sync with the
    session and an error is raised.
    """

    tag = "replay"

    def __init__(self, records: Sequence[ReplayRecord]) -> None:
        self.records = list(records)
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        version = data.get("version")
        if version != 1:
            raise ValueError(f"unsupported replay script version: {version!r}")
        records = [
            ReplayRecord(match=r["match"], response=r["response"])
            for r in data["records"]
        ]
        return cls(records)

    @staticmethod
    def _matches(pattern: str, request: ProviderRequest) -> bool:
        if pattern.startswith("role:"):
            if not request.messages:
                return False
            return request.messages[-1].role == pattern.split(":", 1)[1]
        return fnmatch(request.directive, pattern)

    def _complete(self, request: ProviderRequest) -> str:
        with self._lock:
            if self._cursor >= len(self.records):
                raise ScriptExhausted(
                    f"replay script exhausted after {len(self.records)} records"
                )
            record = self.records[self._cursor]
            self._cursor += 1
        if not self._matches(record.match, request):
            raise ScriptExhausted(
                f"replay record {record.match!r} does not match "
                f"directive {request.directive!r}"
            )
        return record.response


# Expansion of directive tokens into instructions for remote chat backends.
DIRECTIVE_INSTRUCTIONS = {
    "open": "Start the discussion now: introduce yourself as Moderator and "
    "explain the purpose of the discussion.",
    "passage": "Read the passage aloud for the students and make sure they "
    "understand it.",
    "ask": "Present question {index} to the group and invite responses.",
    "prompt": "Encourage {name} to share their thoughts with a short, "
    "supportive prompt.",
    "hint": "A student asked for a hint. Give a helpful hint for the current "
    "question without revealing the answer.",
    "reveal": "Every student has now had a chance to respond to question "
    "{index}. Reveal the correct answer with encouraging, constructive "
    "feedback.",
    "wrapup": "Wrap up the discussion with a short, warm closing message.",
    "feedback": "Write personalized end-of-session feedback for the student "
    "named {name}, based on the entire discussion: highlight strengths and "
    "one concrete way to contribute even better next time.",
}


def expand_directive(directive: str) -> str:
    head, _, tail = directive.partition(":")
    template = DIRECTIVE_INSTRUCTIONS.get(head)
    if template is None:
        return directive
    human_index = tail
    if head in ("ask", "reveal") and tail.isdigit():
        human_index = str(int(tail) + 1)
    return template.replace("{name}", tail).replace("{index}", human_index)


@dataclass
class RemoteConfig:
    base_url: str
    model_name: str
    deadline_seconds: float = 30.0
    retry_count: int = 1
    api_key_env: str = "DISCOURSE_PROVIDER_KEY"


class RemoteProvider(Provider):
    """Chat-completions-style HTTP client.

    Sends ``POST {base_url}/chat/completions`` with a messages array;
    moderator turns map to the assistant role, student and system turns to
    the user role prefixed with the speaker name, and the directive becomes
    the final user instruction.  One retry on timeout.
    """

    def __init__(self, config: RemoteConfig, session: Optional[requests.Session] = None) -> None:
        self.config = config
        self.tag = f"remote:{config.model_name}"
        self._http = session or requests.Session()

    def _payload(self, request: ProviderRequest) -> dict:
        messages = [{"role": "system", "content": request.system_prompt}]
        for msg in request.messages:
            if msg.role == "moderator":
                messages.append({"role": "assistant", "content": msg.text})
            else:
                messages.append({"role": "user", "content": f"{msg.name}: {msg.text}"})
        messages.append({"role": "user", "content": expand_directive(request.directive)})
        return {
            "model": self.config.model_name,
            "messages": messages,
            "max_tokens": request.max_output_tokens,
        }

    def _complete(self, request: ProviderRequest) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        attempts = self.config.retry_count + 1
        for attempt in range(attempts):
            try:
                resp = self._http.post(
                    url,
                    json=self._payload(request),
                    headers=headers,
                    timeout=self.config.deadline_seconds,
                )
            except requests.Timeout:
                if attempt + 1 >= attempts:
                    raise ProviderTimeout(
                        f"no response within {self.config.deadline_seconds}s "
                        f"after {attempts} attempts"
                    ) from None
                continue
            except requests.RequestException as exc:
                raise RemoteError(0, str(exc)[:200]) from exc
            if resp.status_code != 200:
                raise RemoteError(resp.status_code, resp.text[:200])
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise RemoteError(200, f"malformed completion body: {exc}") from exc
            if not text:
                raise RemoteError(200, "empty completion text")
            return text
        raise ProviderTimeout("unreachable")  # pragma: no cover


class InjectedLatencyProvider(Provider):
    """Sleeps a configured delay before each delegated call.

    The i-th call sleeps ``delays[i]``; calls beyond the vector are not
    delayed.  Reported latency covers sleep plus the inner call.
    """

    def __init__(self, inner: Provider, delays: Sequence[float]) -> None:
        if not delays:
            raise ValueError("delays must be non-empty")
        self.inner = inner
        self.delays = list(delays)
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def tag(self) -> str:  # type: ignore[override]
        return self.inner.tag

    def generate(self, request: ProviderRequest) -> ProviderResponse:
        with self._lock:
            index = self._calls
            self._calls += 1
        start = time.monotonic()
        if index < len(self.delays):
            time.sleep(self.delays[index])
        response = self.inner.generate(request)
        return replace(response, latency_seconds=time.monotonic() - start)


def with_injected_latency(provider: Provider, delays: Sequence[float]) -> Provider:
    return InjectedLatencyProvider(provider, delays)


class CannedModerator(Provider):
    """Deterministic offline moderator with readable canned responses.

    Presents real passage and question content by parsing the quiz section
    of its own system prompt (the labelled ``Title:`` / ``Question n`` /
    ``Answer n`` lines the prompt builder emits), so demo sessions work
    without any remote backend and never leak an answer before its reveal.
    """

    tag = "canned"

    @staticmethod
    def _quiz_lines(system_prompt: str) -> list[str]:
        marker = "Quiz Passage and Questions:"
        _, _, quiz = system_prompt.partition(marker)
        return quiz.strip().splitlines()

    def _passage_text(self, system_prompt: str) -> str:
        lines = []
        for line in self._quiz_lines(system_prompt):
            if line.startswith("Question "):
                break
            lines.append(line)
        return "\n".join(lines).strip()

    def _labelled(self, system_prompt: str, label: str) -> str:
        for line in self._quiz_lines(system_prompt):
            if line.startswith(label):
                return line.split(":", 1)[1].strip()
        return ""

    def _complete(self, request: ProviderRequest) -> str:
        head, _, tail = request.directive.partition(":")
        prompt = request.system_prompt
        if head == "open":
            return (
                "Hello everyone, I am your Moderator! We are going to read a "
                "short passage together and discuss a few questions about it. "
                "Every idea counts, so please share your thoughts freely."
            )
        if head == "passage":
            return "Here is our passage for today:\n\n" + self._passage_text(prompt)
        if head == "ask":
            number = int(tail) + 1 if tail.isdigit() else 1
            question = self._labelled(prompt, f"Question {number} ")
            if not question:
                question = self._labelled(prompt, f"Question {number}")
            return f"**Question {number}:** {question}\n\nWhat does everyone think?"
        if head == "prompt":
            return f"What do you think, {tail}? There are no wrong ideas here."
        if head == "hint":
            return (
                "Here is a hint: look back at the passage and pay attention "
                "to what happens right around the moment the question asks "
                "about."
            )
        if head == "reveal":
            number = int(tail) + 1 if tail.isdigit() else 1
            answer = self._labelled(prompt, f"Answer {number}:")
            return (
                f"Great thinking, everyone! The answer is: {answer}\n\n"
                "Well done to everyone who shared an idea."
            )
        if head == "wrapup":
            return (
                "That wraps up our discussion! Thank you all for taking part. "
                "Your personal feedback is on its way."
            )
        if head == "feedback":
            return (
                f"Thanks for joining the discussion, {tail}! Keep sharing "
                "your ideas and asking questions; every contribution makes "
                "the group stronger."
            )
        return f"({request.directive})"


def provider_from_config(spec: dict, base_dir: Optional[Path] = None) -> Provider:
    """Build a backend from a configuration mapping.

    Kinds: ``scripted`` (``responses`` table plus optional ``default``),
    ``canned`` (offline deterministic moderator), ``replay`` (``path`` to a
    replay script, resolved against ``base_dir``), ``remote`` (``base_url``,
    ``model_name``, optional deadline/retries).
    """
    kind = spec.get("kind")
    if kind == "scripted":
        return ScriptedProvider(spec.get("responses", {}), spec.get("default"))
    if kind == "canned":
        return CannedModerator()
    if kind == "replay":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return ReplayProvider.from_file(path)
    if kind == "remote":
        return RemoteProvider(
            RemoteConfig(
                base_url=spec["base_url"],
                model_name=spec["model_name"],
                deadline_seconds=float(spec.get("deadline_seconds", 30.0)),
                retry_count=int(spec.get("retry_count", 1)),
                api_key_env=spec.get("api_key_env", "DISCOURSE_PROVIDER_KEY"),
            )
        )
    raise ValueError(f"unknown provider kind {kind!r}")
