"""Moderated session: wires the turn policy, history, and provider together.

The session is transport-agnostic and split-phase: callers ask for the next
pending action, build the provider request, run the call wherever they like
(inline, thread, task), and apply the result.  A failed provider call
applies nothing, so history and sequence numbers are untouched.  ``step``
and ``drain`` are the synchronous conveniences used by tests, the
simulation driver, and the offline tooling.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..dataset_store import QAPair
from ..llm_provider import Message, Provider, ProviderError, ProviderRequest
from ..session_core import Room, SessionPhase, WrongPhase
from .history import ConversationHistory, HistoryEntry, Role
from .policy import ActionKind, ModeratorAction, PolicyState, next_action
from .prompts import build_system_prompt
from .transcript import TranscriptArchive, recount_stats

MODERATOR_NAME = "Moderator"
DEFAULT_TOKEN_BUDGET = 5000
DEFAULT_MAX_OUTPUT_TOKENS = 512


class ProviderFailure(RuntimeError):
    """A provider call failed; the session state was left unchanged."""

    def __init__(self, directive: str, cause: Exception, attempt: int = 1) -> None:
        super().__init__(f"provider failed on {directive!r} (attempt {attempt}): {cause}")
        self.directive = directive
        self.cause = cause
        self.attempt = attempt


@dataclass
class AppliedAction:
    action: ModeratorAction
    entry: HistoryEntry
    revealed: Optional[tuple[int, str]] = None
    advanced_to: Optional[int] = None
    discussion_complete: bool = False
    wrapped: bool = False


@dataclass
class StudentFeedback:
    feedback_text: str
    message_count: int
    mean_message_tokens: float
    prompted_count: int
    failed: bool = False

    def to_payload(self) -> dict:
        return {
            "feedback_text": self.feedback_text,
            "stats": {
                "message_count": self.message_count,
                "mean_message_tokens": self.mean_message_tokens,
                "prompted_count": self.prompted_count,
            },
            "failed": self.failed,
        }


@dataclass
class FeedbackReport:
    per_student: dict[str, StudentFeedback] = field(default_factory=dict)

    def to_payload(self) -> dict:
        return {name: fb.to_payload() for name, fb in self.per_student.items()}


class ModeratedSession:
    """Single-writer driver for one room's discussion."""

    def __init__(
        self,
        room: Room,
        budget: int = DEFAULT_TOKEN_BUDGET,
        clock: Callable[[], float] = time.time,
        max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
    ) -> None:
        if room.phase is not SessionPhase.DISCUSSION or room.passage is None:
            raise WrongPhase("session requires a room in the discussion phase")
        self.room = room
        self.max_output_tokens = max_output_tokens
        names = [p.display_name for p in room.participants]
        self.system_prompt = build_system_prompt(names, room.passage, room.qa_subset)
        self.archive = TranscriptArchive(clock)
        self.archive.append_marker(
            "meta",
            {
                "room": room.id,
                "roster": names,
                "capacity": room.capacity,
                "passage_id": room.passage.passage_id,
                "passage_title": room.passage.title,
                "questions": len(room.qa_subset),
                "budget": budget,
            },
        )
        self.window = ConversationHistory(
            HistoryEntry.make(Role.SYSTEM, "system", self.system_prompt, -1, clock()),
            budget,
        )
        self.state = PolicyState()
        self._hint_requesters: deque[str] = deque()

    # -- student-side triggers ---------------------------------------------

    def handle_student_message(self, participant_id: str, text: str) -> HistoryEntry:
        participant = self.room.record_student_message(participant_id)
        entry = self.archive.append(Role.STUDENT, participant.display_name, text)
        self.window.append_and_trim(entry)
        self.state.awaiting_students = False
        return entry

    def request_hint(self, participant_id: str) -> None:
        if self.room.phase is not SessionPhase.DISCUSSION:
            raise WrongPhase("hints are only available during the discussion")
        participant = self.room.find_participant(participant_id)
        self._hint_requesters.append(participant.display_name)
        self.state.hint_pending += 1

    def note_membership(self, display_name: str, active: bool) -> None:
        self.archive.append_marker(
            "membership", {"name": display_name, "active": active}
        )

    def poke(self) -> None:
        """Re-evaluate after a grace period with no student response."""
        self.state.awaiting_students = False

    # -- split-phase moderator turn ------------------------------------------

    def next_pending(self) -> Optional[ModeratorAction]:
        return next_action(self.room, self.state)

    def build_request(self, action: ModeratorAction) -> ProviderRequest:
        return ProviderRequest(
            system_prompt=self.system_prompt,
            messages=self.window.projection(),
            directive=action.directive,
            max_output_tokens=self.max_output_tokens,
        )

    def apply_response(self, action: ModeratorAction, text: str) -> AppliedAction:
        marker = self._action_marker(action)
        self.archive.append_marker("action", marker)
        entry = self.archive.append(Role.MODERATOR, MODERATOR_NAME, text)
        self.window.append_and_trim(entry)
        applied = AppliedAction(action=action, entry=entry)

        kind = action.kind
        if kind is ActionKind.OPEN_DISCUSSION:
            self.state.opened = True
        elif kind is ActionKind.PRESENT_PASSAGE:
            self.state.presented = True
        elif kind is ActionKind.ASK_QUESTION:
            self.state.asked_current = True
            self.state.awaiting_students = True
        elif kind is ActionKind.PROMPT_STUDENT:
            target = self.room.find_by_name(action.target or "")
            if target is not None:
                self.room.record_prompt(target.participant_id)
            self.state.awaiting_students = True
        elif kind is ActionKind.GIVE_HINT:
            self.state.hint_pending -= 1
            if self._hint_requesters:
                self._hint_requesters.popleft()
        elif kind is ActionKind.REVEAL_ANSWER:
            applied.revealed = (action.index or 0, self._answer_for(action.index or 0))
            self._absorb_prompt_round()
            outcome = self.room.advance_question()
            self.state.revealed_current = True
            if outcome.complete:
                applied.discussion_complete = True
                self.archive.append_marker("phase", {"phase": "feedback"})
            else:
                applied.advanced_to = outcome.next_index
                self.state.asked_current = False
                self.state.revealed_current = False
                self.state.awaiting_students = False
        elif kind is ActionKind.WRAP_UP:
            self.state.wrapped = True
            applied.wrapped = True
        return applied

    def _action_marker(self, action: ModeratorAction) -> dict:
        payload: dict = {"kind": action.kind.value}
        if action.index is not None:
            payload["index"] = action.index
        if action.target is not None:
            payload["target"] = action.target
        if action.kind is ActionKind.GIVE_HINT and self._hint_requesters:
            payload["requester"] = self._hint_requesters[0]
        return payload

    def _answer_for(self, index: int) -> str:
        pair: QAPair = self.room.qa_subset[index]
        return pair.answer

    def _absorb_prompt_round(self) -> None:
        # A prompted participant who stayed silent had their chance; the
        # reveal may proceed and the question ledger can advance.
        for p in self.room.active_participants():
            if p.prompted_current_question:
                p.responded_current_question = True

    # -- synchronous conveniences ---------------------------------------------

    def step(self, provider: Provider) -> Optional[AppliedAction]:
        action = self.next_pending()
        if action is None:
            return None
        request = self.build_request(action)
        try:
            response = provider.generate(request)
        except ProviderError as exc:
            raise ProviderFailure(action.directive, exc) from exc
        return self.apply_response(action, response.text)

    def drain(self, provider: Provider) -> list[AppliedAction]:
        applied: list[AppliedAction] = []
        while True:
            result = self.step(provider)
            if result is None:
                return applied
            applied.append(result)

    # -- feedback ------------------------------------------------------------

    def ready_for_feedback(self) -> bool:
        return self.room.phase is SessionPhase.FEEDBACK and self.state.wrapped

    def feedback_request(self, display_name: str) -> ProviderRequest:
        return feedback_request(
            self.system_prompt,
            self.archive.conversation(),
            display_name,
            self.max_output_tokens,
        )

    def generate_feedback(self, provider: Provider) -> FeedbackReport:
        if not self.ready_for_feedback():
            raise WrongPhase("feedback requires a wrapped-up session")
        names = [p.display_name for p in self.room.participants]
        for name in names:
            self.archive.append_marker("action", {"kind": "feedback", "student": name})
        return feedback_for_roster(
            names,
            self.system_prompt,
            self.archive.conversation(),
            self.archive.entries,
            provider,
            self.max_output_tokens,
        )


def feedback_request(
    system_prompt: str,
    conversation: list[HistoryEntry],
    display_name: str,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
) -> ProviderRequest:
    messages = tuple(
        Message(role=e.author_role.value, name=e.author_name, text=e.text)
        for e in conversation
    )
    return ProviderRequest(
        system_prompt=system_prompt,
        messages=messages,
        directive=f"feedback:{display_name}",
        max_output_tokens=max_output_tokens,
    )


def feedback_for_roster(
    names: list[str],
    system_prompt: str,
    conversation: list[HistoryEntry],
    archive_entries: list[HistoryEntry],
    provider: Provider,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
) -> FeedbackReport:
    """One provider call per student plus deterministic local statistics."""
    stats = recount_stats(archive_entries)
    report = FeedbackReport()
    for name in names:
        request = feedback_request(system_prompt, conversation, name, max_output_tokens)
        try:
            text = provider.generate(request).text
            failed = False
        except ProviderError as exc:
            text = f"feedback unavailable: {exc}"
            failed = True
        participant_stats = stats.get(name)
        report.per_student[name] = StudentFeedback(
            feedback_text=text,
            message_count=participant_stats.message_count if participant_stats else 0,
            mean_message_tokens=(
                participant_stats.mean_message_tokens if participant_stats else 0.0
            ),
            prompted_count=participant_stats.prompted_count if participant_stats else 0,
            failed=failed,
        )
    return report
