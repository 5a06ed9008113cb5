"""Shared fixtures: datasets, rooms, scripted sessions, and a sync driver."""

from __future__ import annotations

import itertools
from pathlib import Path

import pytest

from discourse.dataset_store import Dataset, Passage, QAPair, QuestionKind
from discourse.llm_provider import ScriptedProvider
from discourse.moderator_engine import ModeratedSession
from discourse.moderator_engine.policy import ActionKind
from discourse.session_core import Room, RoomRegistry, SessionPhase

DATA_DIR = Path(__file__).resolve().parent.parent / "src" / "discourse" / "data"


def make_passage(passage_id: str = "p1", qa_count: int = 3) -> Passage:
    pairs = tuple(
        QAPair(
            question=f"Question text {i}?",
            answer=f"Answer text {i}.",
            kind=QuestionKind.EXPLICIT if i % 2 == 0 else QuestionKind.IMPLICIT,
        )
        for i in range(qa_count)
    )
    return Passage(
        passage_id=passage_id,
        title=f"Passage {passage_id}",
        body=f"Body of passage {passage_id}. Something happens in it.",
        qa_pairs=pairs,
    )


def make_dataset(qa_counts: list[int]) -> Dataset:
    passages = tuple(make_passage(f"p{i}", n) for i, n in enumerate(qa_counts))
    return Dataset(name="synthetic", passages=passages, source_digest="none")


class StepClock:
    """Deterministic clock advancing one unit per reading."""

    def __init__(self) -> None:
        self._counter = itertools.count()

    def __call__(self) -> float:
        return float(next(self._counter))


def make_discussion_room(
    names: list[str],
    qa_count: int = 3,
    max_questions: int = 3,
    clock=None,
) -> tuple[Room, RoomRegistry]:
    """A registry with one room auto-started into Discussion."""
    dataset = make_dataset([qa_count])
    registry = RoomRegistry(
        dataset,
        capacity=len(names),
        min_qa_pairs=1,
        max_questions=max_questions,
        seed=42,
        clock=clock or StepClock(),
    )
    outcome = registry.create_room(names[0])
    room = outcome.room
    for name in names[1:]:
        registry.join_room(room.id, name)
    assert room.phase is SessionPhase.DISCUSSION
    return room, registry


def scripted_moderator() -> ScriptedProvider:
    return ScriptedProvider(
        {
            "open": "Welcome everyone!",
            "passage": "Here is the passage.",
            "ask:*": "Question {index}, what do you think?",
            "prompt:*": "What do you think, {name}?",
            "hint": "Here is a hint.",
            "reveal:*": "The answer to question {index} is revealed.",
            "wrapup": "Thanks everyone, that is a wrap.",
            "feedback:*": "Feedback for {name}: keep it up.",
        }
    )


def drive_session(room: Room, session: ModeratedSession, provider, plan: dict) -> None:
    """Run a discussion to completion against a behavior plan.

    ``plan[name][q]`` is one of:
      * ``"volunteer"``: speaks unprompted after the question (and on prompt),
      * ``"on_prompt"``: speaks only when targeted by a prompt,
      * ``"silent"``: never speaks.

    Silence is simulated by poking the session, which is what the server's
    grace timer does when a prompt goes unanswered.
    """
    applied = session.drain(provider)
    guard = 0
    while room.phase is SessionPhase.DISCUSSION:
        guard += 1
        assert guard < 10_000, "session driver did not terminate"
        last = applied[-1] if applied else None
        q = room.question_index
        if last is not None and last.action.kind is ActionKind.ASK_QUESTION:
            speaker = next(
                (
                    p
                    for p in room.active_participants()
                    if not p.responded_current_question
                    and plan[p.display_name][q] == "volunteer"
                ),
                None,
            )
            if speaker is not None:
                session.handle_student_message(
                    speaker.participant_id, f"{speaker.display_name} thoughts on q{q}"
                )
            else:
                session.poke()
        elif last is not None and last.action.kind is ActionKind.PROMPT_STUDENT:
            target = room.find_by_name(last.action.target)
            if plan[target.display_name][q] in ("volunteer", "on_prompt"):
                session.handle_student_message(
                    target.participant_id,
                    f"{target.display_name} prompted answer q{q}",
                )
            else:
                session.poke()
        else:
            session.poke()
        applied = session.drain(provider)


def run_scripted_session(
    names: list[str],
    plan: dict,
    qa_count: int = 3,
    max_questions: int = 3,
) -> tuple[Room, ModeratedSession]:
    room, _ = make_discussion_room(names, qa_count, max_questions)
    session = ModeratedSession(room, budget=5000, clock=StepClock())
    drive_session(room, session, scripted_moderator(), plan)
    return room, session


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    rows = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" in report.nodeid and report.when == "call":
                rows.append((report.nodeid.split("::")[-1], outcome))
    for report in terminalreporter.stats.get("skipped", []):
        if "test_acceptance.py" in report.nodeid:
            rows.append((report.nodeid.split("::")[-1], "skipped"))
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, outcome in rows:
            label = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[outcome]
            terminalreporter.write_line(f"{label}  {name}")


@pytest.fixture
def storybook_path() -> Path:
    return DATA_DIR / "storybook.jsonl"


@pytest.fixture
def fairytale_excerpt_path() -> Path:
    return DATA_DIR / "fairytaleqa_excerpt.csv"
