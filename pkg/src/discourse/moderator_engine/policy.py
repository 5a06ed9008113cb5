"""Turn policy: which moderator action comes next.

The policy is deterministic.  Opening sequence first (open, passage, first
question), then, at every evaluation point during a question: queued hint
requests are served; if every active participant has responded the answer
is revealed; otherwise the least active participant who has neither
responded nor been prompted this question gets one targeted prompt.  Once
every pending participant has had their single prompt, a persistently
silent one no longer blocks the reveal.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from ..session_core import Room, SessionPhase


class ActionKind(Enum):
    OPEN_DISCUSSION = "open"
    PRESENT_PASSAGE = "passage"
    ASK_QUESTION = "ask"
    PROMPT_STUDENT = "prompt"
    GIVE_HINT = "hint"
    REVEAL_ANSWER = "reveal"
    WRAP_UP = "wrapup"


@dataclass(frozen=True)
class ModeratorAction:
    kind: ActionKind
    index: Optional[int] = None
    target: Optional[str] = None

    @property
    def directive(self) -> str:
        if self.kind in (ActionKind.ASK_QUESTION, ActionKind.REVEAL_ANSWER):
            return f"{self.kind.value}:{self.index}"
        if self.kind is ActionKind.PROMPT_STUDENT:
            return f"{self.kind.value}:{self.target}"
        return self.kind.value


@dataclass
class PolicyState:
    """Progress flags the policy needs beyond the room's turn ledger."""

    opened: bool = False
    presented: bool = False
    asked_current: bool = False
    revealed_current: bool = False
    wrapped: bool = False
    hint_pending: int = 0
    awaiting_students: bool = False


def next_action(room: Room, state: PolicyState) -> Optional[ModeratorAction]:
    """The next due moderator action, or None while the floor is yielded."""
    if room.phase is SessionPhase.FEEDBACK:
        if not state.wrapped:
            return ModeratorAction(ActionKind.WRAP_UP)
        return None
    if room.phase is not SessionPhase.DISCUSSION:
        return None

    if not state.opened:
        return ModeratorAction(ActionKind.OPEN_DISCUSSION)
    if not state.presented:
        return ModeratorAction(ActionKind.PRESENT_PASSAGE)
    if state.hint_pending > 0:
        return ModeratorAction(ActionKind.GIVE_HINT)
    if not state.asked_current:
        return ModeratorAction(ActionKind.ASK_QUESTION, index=room.question_index)
    if state.awaiting_students:
        return None

    pending = [
        p for p in room.active_participants() if not p.responded_current_question
    ]
    if not pending:
        if not state.revealed_current:
            return ModeratorAction(
                ActionKind.REVEAL_ANSWER, index=room.question_index
            )
        return None
    unprompted = [p for p in pending if not p.prompted_current_question]
    if unprompted:
        target = min(unprompted, key=lambda p: (p.message_count, p.joined_at))
        return ModeratorAction(ActionKind.PROMPT_STUDENT, target=target.display_name)
    # Every pending participant already had their prompt round.
    if not state.revealed_current:
        return ModeratorAction(ActionKind.REVEAL_ANSWER, index=room.question_index)
    return None
