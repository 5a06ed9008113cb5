"""Token-budgeted conversation window shared with the text provider.

Trimming removes whole entries, oldest first; the system prompt entry is
pinned and never removed.  If the newest entry plus the system prompt alone
exceed the budget, the entry is still kept and the trim result carries an
over-budget warning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from ..llm_provider import Message
from .tokens import count_tokens


class Role(str, Enum):
    MODERATOR = "moderator"
    STUDENT = "student"
    SYSTEM = "system"


@dataclass(frozen=True)
class HistoryEntry:
    author_role: Role
    author_name: str
    text: str
    token_len: int
    seq: int
    ts: float

    @staticmethod
    def make(role: Role, name: str, text: str, seq: int, ts: float) -> "HistoryEntry":
        return HistoryEntry(
            author_role=role,
            author_name=name,
            text=text,
            token_len=count_tokens(text),
            seq=seq,
            ts=ts,
        )


@dataclass
class TrimResult:
    dropped: list[HistoryEntry] = field(default_factory=list)
    over_budget: bool = False


class ConversationHistory:
    def __init__(self, system_entry: HistoryEntry, budget: int) -> None:
        if budget < 1:
            raise ValueError("budget must be >= 1")
        self.system_entry = system_entry
        self.budget = budget
        self.entries: list[HistoryEntry] = []
        self.token_total = system_entry.token_len
        self.over_budget_events = 0

    def append_and_trim(self, entry: HistoryEntry) -> TrimResult:
        if entry.token_len != count_tokens(entry.text):
            raise ValueError("entry token_len does not match the counting rule")
        if self.entries and entry.seq <= self.entries[-1].seq:
            raise ValueError("entry seq must be strictly increasing")
        self.entries.append(entry)
        self.token_total += entry.token_len
        result = TrimResult()
        while self.token_total > self.budget and len(self.entries) > 1:
            dropped = self.entries.pop(0)
            self.token_total -= dropped.token_len
            result.dropped.append(dropped)
        if self.token_total > self.budget:
            result.over_budget = True
            self.over_budget_events += 1
        return result

    def projection(self) -> tuple[Message, ...]:
        """The exact message window a provider call sees."""
        return tuple(
            Message(role=e.author_role.value, name=e.author_name, text=e.text)
            for e in self.entries
        )
