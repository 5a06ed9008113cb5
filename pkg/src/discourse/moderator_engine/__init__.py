"""Moderator brain: prompt assembly, budgeted history, turn policy, feedback."""

from .tokens import count_tokens
from .history import ConversationHistory, HistoryEntry, Role, TrimResult
from .prompts import EmptyQuiz, EmptyRoster, build_system_prompt
from .policy import ActionKind, ModeratorAction
from .session import (
    AppliedAction,
    FeedbackReport,
    ModeratedSession,
    ProviderFailure,
    StudentFeedback,
)
from .transcript import TranscriptArchive, check_reveal_gating, recount_stats

__all__ = [
    "ActionKind",
    "AppliedAction",
    "ConversationHistory",
    "EmptyQuiz",
    "EmptyRoster",
    "FeedbackReport",
    "HistoryEntry",
    "ModeratedSession",
    "ModeratorAction",
    "ProviderFailure",
    "Role",
    "StudentFeedback",
    "TranscriptArchive",
    "TrimResult",
    "build_system_prompt",
    "check_reveal_gating",
    "count_tokens",
    "recount_stats",
]
