"""Untrimmed session archive and the recounts that audit it.

The archive keeps every entry of a session with a monotonic sequence
number: the conversation itself (moderator and student turns) plus
system-role marker entries that record session metadata and each moderator
action.  One JSON object per line when written to disk::

    {"seq": 3, "ts": 2.0, "role": "student", "name": "Daniel",
     "token_len": 12, "text": "..."}

Markers use role "system" with name "session" and a ``kind payload`` text
(``meta {...}``, ``action {...}``, ``phase {...}``), which keeps the
transcript self-describing: participation statistics, prompt counts, and
reveal ordering are all recomputable from the file alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from .history import HistoryEntry, Role

MARKER_NAME = "session"


class TranscriptError(ValueError):
    """An archive file line failed to parse."""

    def __init__(self, path: str, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class TranscriptArchive:
    def __init__(self, clock: Callable[[], float]) -> None:
        self._clock = clock
        self.entries: list[HistoryEntry] = []
        self._next_seq = 0

    def append(self, role: Role, name: str, text: str) -> HistoryEntry:
        entry = HistoryEntry.make(role, name, text, self._next_seq, self._clock())
        self._next_seq += 1
        self.entries.append(entry)
        return entry

    def append_marker(self, kind: str, payload: dict) -> HistoryEntry:
        text = f"{kind} {json.dumps(payload, sort_keys=True)}"
        return self.append(Role.SYSTEM, MARKER_NAME, text)

    def conversation(self) -> list[HistoryEntry]:
        """Moderator and student turns only, markers excluded."""
        return [e for e in self.entries if e.author_role is not Role.SYSTEM]

    def to_lines(self) -> list[str]:
        return [
            json.dumps(
                {
                    "seq": e.seq,
                    "ts": e.ts,
                    "role": e.author_role.value,
                    "name": e.author_name,
                    "token_len": e.token_len,
                    "text": e.text,
                },
                ensure_ascii=False,
            )
            for e in self.entries
        ]

    def write(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")


def read_archive(path: str | Path) -> list[HistoryEntry]:
    entries: list[HistoryEntry] = []
    source = str(path)
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TranscriptError(source, lineno, f"invalid JSON: {exc}") from exc
        try:
            role = Role(record["role"])
        except (KeyError, ValueError):
            raise TranscriptError(
                source, lineno, f"unknown role token {record.get('role')!r}"
            ) from None
        try:
            entries.append(
                HistoryEntry(
                    author_role=role,
                    author_name=record["name"],
                    text=record["text"],
                    token_len=int(record["token_len"]),
                    seq=int(record["seq"]),
                    ts=float(record["ts"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TranscriptError(source, lineno, f"bad entry: {exc}") from exc
    return entries


def parse_marker(entry: HistoryEntry) -> Optional[tuple[str, dict]]:
    if entry.author_role is not Role.SYSTEM or entry.author_name != MARKER_NAME:
        return None
    kind, _, payload = entry.text.partition(" ")
    if not payload:
        return None
    try:
        return kind, json.loads(payload)
    except json.JSONDecodeError:
        return None


def session_meta(entries: Iterable[HistoryEntry]) -> Optional[dict]:
    for entry in entries:
        marker = parse_marker(entry)
        if marker and marker[0] == "meta":
            return marker[1]
    return None


@dataclass
class ParticipantStats:
    message_count: int = 0
    token_sum: int = 0
    prompted_count: int = 0

    @property
    def mean_message_tokens(self) -> float:
        if self.message_count == 0:
            return 0.0
        return self.token_sum / self.message_count


def recount_stats(entries: list[HistoryEntry]) -> dict[str, ParticipantStats]:
    """Per-student statistics recomputed from the archive alone."""
    meta = session_meta(entries)
    stats: dict[str, ParticipantStats] = {}
    if meta:
        for name in meta.get("roster", []):
            stats[name] = ParticipantStats()
    for entry in entries:
        if entry.author_role is Role.STUDENT:
            s = stats.setdefault(entry.author_name, ParticipantStats())
            s.message_count += 1
            s.token_sum += entry.token_len
        marker = parse_marker(entry)
        if marker and marker[0] == "action" and marker[1].get("kind") == "prompt":
            target = marker[1].get("target", "")
            stats.setdefault(target, ParticipantStats()).prompted_count += 1
    return stats


@dataclass
class GatingViolation:
    question_index: int
    participant: str
    reveal_seq: int

    def __str__(self) -> str:
        return (
            f"question {self.question_index}: answer revealed at seq "
            f"{self.reveal_seq} before {self.participant} responded or "
            f"completed a prompt round"
        )


def check_reveal_gating(entries: list[HistoryEntry]) -> list[GatingViolation]:
    """Scan a transcript for reveals that beat the gating policy.

    For every reveal marker, every participant active for that question must
    have either a student entry or a prompt targeting them inside the span
    that starts at the question's ask marker.  Participants marked inactive
    by a ``membership`` marker are excluded from the span they left.
    """
    meta = session_meta(entries)
    roster = list(meta.get("roster", [])) if meta else []
    inactive: set[str] = set()
    violations: list[GatingViolation] = []
    responded: set[str] = set()
    prompted: set[str] = set()
    current_question: Optional[int] = None

    for entry in entries:
        marker = parse_marker(entry)
        if marker is None:
            if entry.author_role is Role.STUDENT:
                responded.add(entry.author_name)
            continue
        kind, payload = marker
        if kind == "membership":
            name = payload.get("name", "")
            if payload.get("active"):
                inactive.discard(name)
            else:
                inactive.add(name)
        elif kind == "action":
            action = payload.get("kind")
            if action == "ask":
                current_question = int(payload["index"])
                responded = set()
                prompted = set()
            elif action == "prompt":
                prompted.add(payload.get("target", ""))
            elif action == "reveal":
                index = int(payload["index"])
                for name in roster:
                    if name in inactive:
                        continue
                    if name not in responded and name not in prompted:
                        violations.append(
                            GatingViolation(
                                question_index=index,
                                participant=name,
                                reveal_seq=entry.seq,
                            )
                        )
                if current_question is not None and index != current_question:
                    violations.append(
                        GatingViolation(
                            question_index=index,
                            participant="<out-of-span reveal>",
                            reveal_seq=entry.seq,
                        )
                    )
    return violations
