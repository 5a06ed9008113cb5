"""Room lifecycle, membership, phase transitions, and the turn-taking ledger.

A room moves Lobby -> Discussion -> Feedback -> Closed, never backwards.
Reaching capacity auto-starts the discussion exactly once; the registry
selects the discussion passage at that moment so a room in Discussion always
has one.  All mutating registry calls are serialized by an internal lock, so
concurrent join attempts can never overfill a room.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .dataset_store import Dataset, Passage, QAPair, select_passage

# Uppercase Crockford-style alphabet: no 0/O and no 1/I, so meeting IDs can
# be read aloud and typed back without ambiguity.
ROOM_ID_ALPHABET = "23456789ABCDEFGHJKLMNPQRSTUVWXYZ"
ROOM_ID_LENGTH = 8
_ID_RETRY_LIMIT = 100


class NameInvalid(ValueError):
    """Display name is empty after trimming whitespace."""


class IdSpaceExhausted(RuntimeError):
    """Could not find a free room id; signals a server anomaly."""


class WrongPhase(RuntimeError):
    """Operation attempted outside its legal session phase."""


class UnknownParticipant(KeyError):
    """participant_id does not belong to this room."""


class NotAllResponded(RuntimeError):
    """advance_question called while some active participant is pending."""


class SessionPhase(Enum):
    LOBBY = "lobby"
    DISCUSSION = "discussion"
    FEEDBACK = "feedback"
    CLOSED = "closed"


_PHASE_ORDER = [
    SessionPhase.LOBBY,
    SessionPhase.DISCUSSION,
    SessionPhase.FEEDBACK,
    SessionPhase.CLOSED,
]


def generate_room_id(rng: random.Random) -> str:
    return "".join(rng.choice(ROOM_ID_ALPHABET) for _ in range(ROOM_ID_LENGTH))


def is_valid_room_id(value: str) -> bool:
    return len(value) == ROOM_ID_LENGTH and all(
        ch in ROOM_ID_ALPHABET for ch in value
    )


@dataclass
class Participant:
    participant_id: str
    display_name: str
    joined_at: float
    message_count: int = 0
    responded_current_question: bool = False
    prompted_current_question: bool = False
    prompted_count: int = 0
    active: bool = True


class JoinStatus(Enum):
    JOINED = "joined"
    ROOM_FULL = "room_full"
    ALREADY_STARTED = "already_started"
    NOT_FOUND = "not_found"


@dataclass
class JoinOutcome:
    status: JoinStatus
    participant: Optional[Participant] = None
    room: Optional["Room"] = None
    auto_started: bool = False
    rejoined: bool = False


@dataclass
class AdvanceOutcome:
    complete: bool
    next_index: Optional[int] = None


@dataclass
class Room:
    id: str
    capacity: int
    created_at: float
    max_questions: int
    clock: Callable[[], float] = time.time
    participants: list[Participant] = field(default_factory=list)
    phase: SessionPhase = SessionPhase.LOBBY
    passage: Optional[Passage] = None
    qa_subset: tuple[QAPair, ...] = ()
    question_index: int = 0
    auto_started: bool = False
    _join_stamp: float = field(default=0.0, repr=False)
    _id_counter: int = field(default=0, repr=False)

    # -- membership -------------------------------------------------------

    def active_participants(self) -> list[Participant]:
        return [p for p in self.participants if p.active]

    def find_participant(self, participant_id: str) -> Participant:
        for p in self.participants:
            if p.participant_id == participant_id:
                return p
        raise UnknownParticipant(participant_id)

    def find_by_name(self, display_name: str) -> Optional[Participant]:
        for p in self.participants:
            if p.display_name == display_name:
                return p
        return None

    def resolve_display_name(self, requested: str) -> str:
        """Disambiguate duplicates with a numeric suffix (Ethan, Ethan-2)."""
        taken = {p.display_name for p in self.participants}
        if requested not in taken:
            return requested
        n = 2
        while f"{requested}-{n}" in taken:
            n += 1
        return f"{requested}-{n}"

    def _next_join_stamp(self) -> float:
        stamp = self.clock()
        if stamp <= self._join_stamp:
            stamp = self._join_stamp + 1e-6
        self._join_stamp = stamp
        return stamp

    def add_participant(self, display_name: str) -> Participant:
        name = display_name.strip()
        if not name:
            raise NameInvalid("display name is empty")
        if len(self.participants) >= self.capacity:
            raise RuntimeError("room is full")  # guarded by the registry
        self._id_counter += 1
        participant = Participant(
            participant_id=f"{self.id}-{self._id_counter}",
            display_name=self.resolve_display_name(name),
            joined_at=self._next_join_stamp(),
        )
        self.participants.append(participant)
        return participant

    def remove_participant(self, participant_id: str) -> None:
        """Free a lobby seat entirely; mid-discussion use mark_inactive."""
        participant = self.find_participant(participant_id)
        if self.phase is not SessionPhase.LOBBY:
            raise WrongPhase("participants can only be removed in the lobby")
        self.participants.remove(participant)

    def mark_inactive(self, participant_id: str) -> Participant:
        participant = self.find_participant(participant_id)
        participant.active = False
        return participant

    def reactivate(self, participant_id: str) -> Participant:
        participant = self.find_participant(participant_id)
        participant.active = True
        return participant

    # -- phase machine ----------------------------------------------------

    def advance_phase(self, target: SessionPhase) -> None:
        current = _PHASE_ORDER.index(self.phase)
        desired = _PHASE_ORDER.index(target)
        if desired != current + 1:
            raise WrongPhase(f"illegal transition {self.phase.value} -> {target.value}")
        self.phase = target

    def start_discussion(self, passage: Passage) -> None:
        if len(self.participants) != self.capacity:
            raise WrongPhase("discussion requires a full room")
        if self.auto_started:
            raise WrongPhase("discussion already started")
        self.passage = passage
        self.qa_subset = passage.qa_pairs[: self.max_questions]
        self.question_index = 0
        self.auto_started = True
        self.advance_phase(SessionPhase.DISCUSSION)

    def _require_discussion(self) -> None:
        if self.phase is not SessionPhase.DISCUSSION:
            raise WrongPhase(f"expected discussion phase, got {self.phase.value}")

    # -- turn ledger ------------------------------------------------------

    def record_student_message(self, participant_id: str) -> Participant:
        self._require_discussion()
        participant = self.find_participant(participant_id)
        participant.message_count += 1
        participant.responded_current_question = True
        return participant

    def all_responded(self) -> bool:
        self._require_discussion()
        return all(
            p.responded_current_question for p in self.active_participants()
        )

    def least_active_participant(self) -> Participant:
        self._require_discussion()
        candidates = self.active_participants()
        if not candidates:
            raise WrongPhase("no active participants")
        return min(candidates, key=lambda p: (p.message_count, p.joined_at))

    def record_prompt(self, participant_id: str) -> Participant:
        participant = self.find_participant(participant_id)
        participant.prompted_current_question = True
        participant.prompted_count += 1
        return participant

    def current_question(self) -> QAPair:
        self._require_discussion()
        return self.qa_subset[self.question_index]

    def advance_question(self) -> AdvanceOutcome:
        self._require_discussion()
        if not self.all_responded():
            raise NotAllResponded("some active participant has not responded")
        if self.question_index + 1 >= len(self.qa_subset):
            self.advance_phase(SessionPhase.FEEDBACK)
            return AdvanceOutcome(complete=True)
        self.question_index += 1
        for p in self.participants:
            p.responded_current_question = False
            p.prompted_current_question = False
        return AdvanceOutcome(complete=False, next_index=self.question_index)

    def reset_question_flags(self) -> None:
        for p in self.participants:
            p.responded_current_question = False
            p.prompted_current_question = False


@dataclass
class CreateOutcome:
    room: Room
    participant: Participant
    auto_started: bool


class RoomRegistry:
    """Owns all live rooms in one server instance.

    ``capacity``, ``min_qa_pairs`` and ``max_questions`` come from server
    configuration; the passage for each auto-started room is drawn from
    ``dataset`` with a per-room seed taken from the registry RNG, so a fixed
    server seed reproduces the same rooms and passages.
    """

    def __init__(
        self,
        dataset: Dataset,
        capacity: int = 4,
        min_qa_pairs: int = 1,
        max_questions: int = 3,
        seed: Optional[int] = None,
        clock: Callable[[], float] = time.time,
    ) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.dataset = dataset
        self.capacity = capacity
        self.min_qa_pairs = min_qa_pairs
        self.max_questions = max_questions
        self.clock = clock
        self._rng = random.Random(seed)
        self._rooms: dict[str, Room] = {}
        self._lock = threading.RLock()

    def _fresh_room_id(self) -> str:
        for _ in range(_ID_RETRY_LIMIT):
            candidate = generate_room_id(self._rng)
            if candidate not in self._rooms:
                return candidate
        raise IdSpaceExhausted(
            f"no free room id after {_ID_RETRY_LIMIT} attempts "
            f"({len(self._rooms)} live rooms)"
        )

    def _start_discussion(self, room: Room) -> None:
        passage = select_passage(
            self.dataset, self.min_qa_pairs, self._rng.randrange(2**63)
        )
        room.start_discussion(passage)

    def create_room(self, display_name: str) -> CreateOutcome:
        if not display_name.strip():
            raise NameInvalid("display name is empty")
        with self._lock:
            room = Room(
                id=self._fresh_room_id(),
                capacity=self.capacity,
                created_at=self.clock(),
                max_questions=self.max_questions,
                clock=self.clock,
            )
            participant = room.add_participant(display_name)
            auto_started = len(room.participants) == room.capacity
            if auto_started:
                self._start_discussion(room)
            self._rooms[room.id] = room
            return CreateOutcome(room, participant, auto_started)

    def join_room(self, room_id: str, display_name: str) -> JoinOutcome:
        if not display_name.strip():
            raise NameInvalid("display name is empty")
        with self._lock:
            room = self._rooms.get(room_id)
            if room is None:
                return JoinOutcome(JoinStatus.NOT_FOUND)
            if room.phase is SessionPhase.DISCUSSION:
                existing = room.find_by_name(display_name.strip())
                if existing is not None and not existing.active:
                    room.reactivate(existing.participant_id)
                    return JoinOutcome(
                        JoinStatus.JOINED,
                        participant=existing,
                        room=room,
                        rejoined=True,
                    )
            if len(room.participants) >= room.capacity:
                # Excess joiners are told the room is full; a started room
                # always holds capacity participants (inactive seats stay
                # reserved for rejoining).
                return JoinOutcome(JoinStatus.ROOM_FULL, room=room)
            if room.phase is not SessionPhase.LOBBY:
                return JoinOutcome(JoinStatus.ALREADY_STARTED, room=room)
            participant = room.add_participant(display_name)
            auto_started = len(room.participants) == room.capacity
            if auto_started:
                self._start_discussion(room)
            return JoinOutcome(
                JoinStatus.JOINED,
                participant=participant,
                room=room,
                auto_started=auto_started,
            )

    def leave_room(self, room_id: str, participant_id: str) -> None:
        with self._lock:
            room = self._rooms.get(room_id)
            if room is None:
                return
            if room.phase is SessionPhase.LOBBY:
                room.remove_participant(participant_id)
            else:
                room.mark_inactive(participant_id)

    def get(self, room_id: str) -> Optional[Room]:
        with self._lock:
            return self._rooms.get(room_id)

    def close_room(self, room_id: str) -> None:
        """Drop the room from the live set.

        Only a room that finished Feedback moves to Closed; a room abandoned
        earlier keeps its last phase (any prefix of the ladder is legal).
        """
        with self._lock:
            room = self._rooms.pop(room_id, None)
            if room is not None and room.phase is SessionPhase.FEEDBACK:
                room.advance_phase(SessionPhase.CLOSED)

    def live_rooms(self) -> list[Room]:
        with self._lock:
            return list(self._rooms.values())
