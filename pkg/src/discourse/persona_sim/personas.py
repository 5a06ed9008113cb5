"""Student persona archetypes and their response behavior.

A persona answers from a per-question script or from a bound text backend.
Backend personas assemble a three-part prompt (identity directives,
contextual awareness rule, response constraints) plus the visible chat
history.  The passive archetype falls back to its signature minimal answer
when its script runs out; other archetypes treat an exhausted script as a
harness misconfiguration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..llm_provider import Message, Provider, ProviderRequest
from ..llm_provider import ScriptExhausted

PASSIVE_DEFAULT_LINE = "I don't know"

PERSONA_PROMPT_TEMPLATE = """You are {name}, a student in a moderated group chat discussion.

Identity: {identity}

Context: {context}

Constraints: {constraints}
"""


class Archetype(str, Enum):
    PASSIVE = "passive"
    TOXIC = "toxic"
    OFF_TOPIC = "off_topic"
    CONSTRUCTIVE = "constructive"


@dataclass
class PersonaSpec:
    name: str
    archetype: Archetype
    identity_directives: str = ""
    context_rule: str = ""
    response_constraints: str = ""
    scripted_lines: Optional[list[Optional[str]]] = None
    backend_binding: Optional[str] = None
    request_hint_on: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.scripted_lines is None and self.backend_binding is None:
            raise ValueError(f"persona {self.name!r} has no response source")
        if self.backend_binding is not None:
            missing = [
                label
                for label, value in (
                    ("identity_directives", self.identity_directives),
                    ("context_rule", self.context_rule),
                    ("response_constraints", self.response_constraints),
                )
                if not value.strip()
            ]
            if missing:
                raise ValueError(
                    f"backend persona {self.name!r} is missing prompt "
                    f"components: {', '.join(missing)}"
                )

    @property
    def scripted(self) -> bool:
        return self.backend_binding is None

    def system_prompt(self) -> str:
        return PERSONA_PROMPT_TEMPLATE.format(
            name=self.name,
            identity=self.identity_directives,
            context=self.context_rule,
            constraints=self.response_constraints,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "PersonaSpec":
        return cls(
            name=data["name"],
            archetype=Archetype(data["archetype"]),
            identity_directives=data.get("identity_directives", ""),
            context_rule=data.get("context_rule", ""),
            response_constraints=data.get("response_constraints", ""),
            scripted_lines=data.get("lines"),
            backend_binding=data.get("backend"),
            request_hint_on=list(data.get("request_hint_on", [])),
        )


class PersonaAgent:
    """Consumes a persona's script (or backend) one turn at a time."""

    def __init__(self, spec: PersonaSpec, provider: Optional[Provider] = None) -> None:
        if not spec.scripted and provider is None:
            raise ValueError(f"backend persona {spec.name!r} needs a provider")
        self.spec = spec
        self.provider = provider
        self._cursor = 0

    def has_spoken_line(self) -> bool:
        """True if the next scripted turn is an actual line (volunteering)."""
        if not self.spec.scripted:
            return True
        lines = self.spec.scripted_lines or []
        return self._cursor < len(lines) and lines[self._cursor] is not None

    def respond(
        self, visible_history: list[Message], directive: str = "respond"
    ) -> Optional[str]:
        """The persona's next turn: a line to say, or None to stay silent."""
        if self.spec.scripted:
            lines = self.spec.scripted_lines or []
            if self._cursor >= len(lines):
                if self.spec.archetype is Archetype.PASSIVE:
                    return PASSIVE_DEFAULT_LINE
                raise ScriptExhausted(
                    f"persona {self.spec.name!r} has no line for turn {self._cursor}"
                )
            line = lines[self._cursor]
            self._cursor += 1
            return line
        request = ProviderRequest(
            system_prompt=self.spec.system_prompt(),
            messages=tuple(visible_history),
            directive=directive,
        )
        return self.provider.generate(request).text
