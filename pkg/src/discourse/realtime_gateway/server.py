"""WebSocket gateway: connection handling, room writers, ordered broadcast.

Every room is owned by a single worker task; client events are enqueued to
the owning room's queue and applied serially, so capacity checks and turn
bookkeeping never race.  Provider calls run in worker threads and come back
as queue events, which keeps joins and other rooms responsive while a slow
backend thinks.

Broadcast envelopes are stamped with a per-room strictly increasing ``seq``
and appended to the room's broadcast log; members attached later (including
reconnecting members) receive the full log as a backfill before live
traffic, so every client can render one identical ordered transcript.
"""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass
from typing import Any, Callable, Optional

from websockets.asyncio.server import serve
from websockets.exceptions import ConnectionClosed

from ..llm_provider import Provider
from ..moderator_engine import ModeratedSession
from ..moderator_engine.policy import ModeratorAction
from ..moderator_engine.session import FeedbackReport
from ..session_core import (
    JoinStatus,
    NameInvalid,
    IdSpaceExhausted,
    RoomRegistry,
    SessionPhase,
    UnknownParticipant,
    WrongPhase,
)
from .protocol import CLIENT_EVENTS, ProtocolError, encode_envelope, make_envelope, parse_envelope

logger = logging.getLogger(__name__)

_SHUTDOWN = object()


class Connection:
    """One client socket with an ordered outbound queue."""

    def __init__(self, ws: Any) -> None:
        self.ws = ws
        self.outbox: asyncio.Queue = asyncio.Queue()
        self.room_id: Optional[str] = None
        self.participant_id: Optional[str] = None
        self.display_name: Optional[str] = None
        self.dead = False
        self._pump_task = asyncio.create_task(self._pump())

    def send(self, envelope: dict) -> None:
        if not self.dead:
            self.outbox.put_nowait(envelope)

    async def _pump(self) -> None:
        while True:
            envelope = await self.outbox.get()
            if envelope is None:
                break
            try:
                await self.ws.send(encode_envelope(envelope))
            except ConnectionClosed:
                self.dead = True
                break
            except Exception:
                logger.exception("send failed")
                self.dead = True
                break

    async def close(self) -> None:
        # Drain queued envelopes before closing so a final error frame
        # (e.g. protocol_error) still reaches the client.
        self.outbox.put_nowait(None)
        try:
            await asyncio.wait_for(self._pump_task, 5)
        except (asyncio.CancelledError, asyncio.TimeoutError):
            pass
        self.dead = True
        try:
            await self.ws.close()
        except Exception:
            pass


# Room queue events.


@dataclass
class InitialJoin:
    conn: Connection
    participant_id: str
    auto_started: bool


@dataclass
class JoinRequest:
    conn: Connection
    display_name: str


@dataclass
class PostMessage:
    conn: Connection
    text: str


@dataclass
class HintRequest:
    conn: Connection


@dataclass
class Leave:
    conn: Connection


@dataclass
class ProviderDone:
    action: ModeratorAction
    text: Optional[str]
    error: Optional[Exception]


@dataclass
class FeedbackDone:
    report: Optional[FeedbackReport]
    error: Optional[Exception]


@dataclass
class Poke:
    gen: int


class RoomRuntime:
    """Single logical writer for one room."""

    def __init__(self, gateway: "GatewayServer", room_id: str) -> None:
        self.gateway = gateway
        self.room_id = room_id
        self.queue: asyncio.Queue = asyncio.Queue()
        self.conns: dict[str, Connection] = {}
        self.log: list[dict] = []
        self.seq = 0
        self.session: Optional[ModeratedSession] = None
        self.moderator_busy = False
        self.feedback_started = False
        self.skip_relaunch = False
        self.closed = False
        self.grace_gen = 0
        self._grace_handle: Optional[asyncio.TimerHandle] = None
        self.task = asyncio.create_task(self._run())

    def enqueue(self, event: Any) -> None:
        self.queue.put_nowait(event)

    async def _run(self) -> None:
        while True:
            event = await self.queue.get()
            if event is _SHUTDOWN:
                break
            try:
                self._handle(event)
            except Exception:
                logger.exception("room %s: event %r failed", self.room_id, event)
            self._maybe_moderate()

    # -- envelope delivery --------------------------------------------------

    def broadcast(self, event_type: str, payload: dict) -> dict:
        envelope = make_envelope(
            event_type,
            room_id=self.room_id,
            sender="server",
            payload=payload,
            seq=self.seq,
            ts=self.gateway.clock(),
        )
        self.seq += 1
        self.log.append(envelope)
        for conn in list(self.conns.values()):
            conn.send(envelope)
        return envelope

    def unicast(self, conn: Connection, event_type: str, payload: dict) -> None:
        conn.send(
            make_envelope(
                event_type,
                room_id=self.room_id,
                sender="server",
                payload=payload,
                ts=self.gateway.clock(),
            )
        )

    def _roster_payload(self) -> dict:
        room = self.gateway.registry.get(self.room_id)
        roster = [p.display_name for p in room.participants] if room else []
        capacity = room.capacity if room else 0
        return {"roster": roster, "capacity": capacity}

    # -- event handling -------------------------------------------------------

    def _handle(self, event: Any) -> None:
        if isinstance(event, InitialJoin):
            self._attach(event.conn, event.participant_id)
            self.broadcast("joined", self._roster_payload())
            if event.auto_started:
                self._start_session()
        elif isinstance(event, JoinRequest):
            self._handle_join(event)
        elif isinstance(event, PostMessage):
            self._handle_message(event)
        elif isinstance(event, HintRequest):
            self._handle_hint(event)
        elif isinstance(event, Leave):
            self._handle_leave(event)
        elif isinstance(event, ProviderDone):
            self._handle_provider_done(event)
        elif isinstance(event, FeedbackDone):
            self._handle_feedback_done(event)
        elif isinstance(event, Poke):
            if event.gen == self.grace_gen and self.session is not None:
                self.session.poke()

    def _attach(self, conn: Connection, participant_id: str) -> None:
        room = self.gateway.registry.get(self.room_id)
        participant = room.find_participant(participant_id)
        conn.room_id = self.room_id
        conn.participant_id = participant_id
        conn.display_name = participant.display_name
        self.conns[participant_id] = conn
        for envelope in self.log:  # backfill from seq 0, gap-free
            conn.send(envelope)

    def _handle_join(self, event: JoinRequest) -> None:
        conn = event.conn
        try:
            outcome = self.gateway.registry.join_room(self.room_id, event.display_name)
        except NameInvalid:
            conn.room_id = None
            self.unicast(conn, "error", {"code": "name_invalid", "detail": "display name is empty"})
            return
        if outcome.status is JoinStatus.JOINED:
            self._attach(conn, outcome.participant.participant_id)
            if outcome.rejoined and self.session is not None:
                self.session.note_membership(outcome.participant.display_name, True)
            self.broadcast("joined", self._roster_payload())
            if outcome.auto_started:
                self._start_session()
        elif outcome.status is JoinStatus.ROOM_FULL:
            conn.room_id = None
            self.unicast(conn, "room_full", {})
        elif outcome.status is JoinStatus.ALREADY_STARTED:
            conn.room_id = None
            self.unicast(
                conn,
                "error",
                {"code": "already_started", "detail": "session already in progress"},
            )
        else:
            conn.room_id = None
            self.unicast(conn, "error", {"code": "unknown_room", "detail": self.room_id})

    def _start_session(self) -> None:
        room = self.gateway.registry.get(self.room_id)
        self.session = ModeratedSession(
            room,
            budget=self.gateway.budget,
            clock=self.gateway.clock,
            max_output_tokens=self.gateway.max_output_tokens,
        )
        self.broadcast("session_started", {"passage_title": room.passage.title})

    def _handle_message(self, event: PostMessage) -> None:
        conn = event.conn
        if conn.participant_id is None or conn.participant_id not in self.conns:
            self.unicast(conn, "error", {"code": "not_member", "detail": ""})
            return
        if not event.text.strip():
            self.unicast(conn, "error", {"code": "invalid_payload", "detail": "empty text"})
            return
        if self.session is None:
            self.unicast(
                conn, "error", {"code": "wrong_phase", "detail": "discussion not started"}
            )
            return
        try:
            entry = self.session.handle_student_message(conn.participant_id, event.text)
        except WrongPhase as exc:
            self.unicast(conn, "error", {"code": "wrong_phase", "detail": str(exc)})
            return
        except UnknownParticipant:
            self.unicast(conn, "error", {"code": "not_member", "detail": ""})
            return
        self.grace_gen += 1
        self._cancel_grace()
        self.broadcast(
            "chat_broadcast", {"name": entry.author_name, "text": event.text}
        )

    def _handle_hint(self, event: HintRequest) -> None:
        conn = event.conn
        if conn.participant_id is None or self.session is None:
            self.unicast(conn, "error", {"code": "wrong_phase", "detail": "no active discussion"})
            return
        try:
            self.session.request_hint(conn.participant_id)
        except (WrongPhase, UnknownParticipant) as exc:
            self.unicast(conn, "error", {"code": "wrong_phase", "detail": str(exc)})

    def _handle_leave(self, event: Leave) -> None:
        conn = event.conn
        participant_id = conn.participant_id
        if participant_id is None:
            return
        if self.conns.get(participant_id) is conn:
            self.conns.pop(participant_id, None)
        conn.room_id = None
        conn.participant_id = None
        room = self.gateway.registry.get(self.room_id)
        if room is None:
            return
        phase = room.phase
        self.gateway.registry.leave_room(self.room_id, participant_id)
        if phase is SessionPhase.LOBBY:
            self.broadcast("joined", self._roster_payload())
        elif phase is SessionPhase.DISCUSSION and self.session is not None:
            participant = room.find_participant(participant_id)
            self.session.note_membership(participant.display_name, False)
            # A departed member must not block the current question.
            self.grace_gen += 1
            self.session.poke()

    def _handle_provider_done(self, event: ProviderDone) -> None:
        self.moderator_busy = False
        if event.error is not None or self.session is None:
            self.skip_relaunch = True
            self.broadcast(
                "error",
                {"code": "provider_failure", "detail": str(event.error)},
            )
            return
        applied = self.session.apply_response(event.action, event.text or "")
        self.broadcast(
            "moderator_message",
            {"text_markdown": applied.entry.text, "action": event.action.directive},
        )
        if applied.revealed is not None:
            index, answer = applied.revealed
            self.broadcast("question_revealed", {"index": index, "answer": answer})
        # While the floor is with the students (after an ask or prompt, or a
        # hint served mid-question), a silent room must still progress.
        if self.session.state.awaiting_students:
            self._arm_grace()

    def _handle_feedback_done(self, event: FeedbackDone) -> None:
        self.moderator_busy = False
        if event.error is not None or event.report is None:
            self.broadcast(
                "error", {"code": "provider_failure", "detail": str(event.error)}
            )
            self.closed = True
            return
        room = self.gateway.registry.get(self.room_id)
        if room is not None:
            for participant in room.participants:
                conn = self.conns.get(participant.participant_id)
                feedback = event.report.per_student.get(participant.display_name)
                if conn is not None and feedback is not None:
                    self.unicast(
                        conn,
                        "feedback_delivered",
                        feedback.to_payload(),
                    )
        self.gateway.registry.close_room(self.room_id)
        self.closed = True

    # -- moderation loop --------------------------------------------------------

    def _maybe_moderate(self) -> None:
        if self.closed or self.session is None or self.moderator_busy:
            return
        if self.skip_relaunch:
            self.skip_relaunch = False
            return
        if self.session.ready_for_feedback():
            if not self.feedback_started:
                self.feedback_started = True
                self.moderator_busy = True
                asyncio.create_task(self._call_feedback())
            return
        action = self.session.next_pending()
        if action is None:
            return
        request = self.session.build_request(action)
        self.moderator_busy = True
        self._cancel_grace()
        asyncio.create_task(self._call_provider(action, request))

    async def _call_provider(self, action: ModeratorAction, request) -> None:
        try:
            response = await asyncio.to_thread(
                self.gateway.provider.generate, request
            )
        except Exception as exc:
            self.enqueue(ProviderDone(action, None, exc))
        else:
            self.enqueue(ProviderDone(action, response.text, None))

    async def _call_feedback(self) -> None:
        try:
            report = await asyncio.to_thread(
                self.session.generate_feedback, self.gateway.provider
            )
        except Exception as exc:
            self.enqueue(FeedbackDone(None, exc))
        else:
            self.enqueue(FeedbackDone(report, None))

    def _arm_grace(self) -> None:
        self._cancel_grace()
        self.grace_gen += 1
        gen = self.grace_gen
        loop = asyncio.get_running_loop()
        self._grace_handle = loop.call_later(
            self.gateway.prompt_grace_seconds,
            lambda: self.queue.put_nowait(Poke(gen)),
        )

    def _cancel_grace(self) -> None:
        if self._grace_handle is not None:
            self._grace_handle.cancel()
            self._grace_handle = None

    async def shutdown(self) -> None:
        self.broadcast("error", {"code": "shutting_down", "detail": ""})
        self._cancel_grace()
        self.enqueue(_SHUTDOWN)
        try:
            await self.task
        except asyncio.CancelledError:
            pass


class GatewayServer:
    def __init__(
        self,
        registry: RoomRegistry,
        provider: Provider,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
        budget: int = 5000,
        max_output_tokens: int = 512,
        clock: Callable[[], float] = time.time,
        prompt_grace_seconds: float = 20.0,
        ping_interval: Optional[float] = 15.0,
        ping_timeout: Optional[float] = 30.0,
    ) -> None:
        self.registry = registry
        self.provider = provider
        self.host = host
        self.port = port
        self.budget = budget
        self.max_output_tokens = max_output_tokens
        self.clock = clock
        self.prompt_grace_seconds = prompt_grace_seconds
        self.ping_interval = ping_interval
        self.ping_timeout = ping_timeout
        self._rooms: dict[str, RoomRuntime] = {}
        self._server = None
        self._connections: set[Connection] = set()

    async def start(self) -> tuple[str, int]:
        self._server = await serve(
            self._handler,
            self.host,
            self.port,
            ping_interval=self.ping_interval,
            ping_timeout=self.ping_timeout,
        )
        sock = next(iter(self._server.sockets))
        self.port = sock.getsockname()[1]
        return self.host, self.port

    async def stop(self) -> None:
        for runtime in list(self._rooms.values()):
            await runtime.shutdown()
        for conn in list(self._connections):
            await conn.close()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        await asyncio.Future()

    # -- connection handling ----------------------------------------------------

    async def _handler(self, ws: Any) -> None:
        conn = Connection(ws)
        self._connections.add(conn)
        try:
            async for raw in ws:
                try:
                    envelope = parse_envelope(raw)
                except ProtocolError as exc:
                    conn.send(
                        make_envelope(
                            "error",
                            payload={"code": "protocol_error", "detail": str(exc)},
                            ts=self.clock(),
                        )
                    )
                    break
                self._dispatch(conn, envelope)
        except ConnectionClosed:
            pass
        finally:
            self._connections.discard(conn)
            if conn.room_id is not None:
                runtime = self._rooms.get(conn.room_id)
                if runtime is not None:
                    runtime.enqueue(Leave(conn))
            await conn.close()

    def _error(self, conn: Connection, code: str, detail: str = "") -> None:
        conn.send(
            make_envelope(
                "error", payload={"code": code, "detail": detail}, ts=self.clock()
            )
        )

    def _dispatch(self, conn: Connection, envelope: dict) -> None:
        event_type = envelope["type"]
        payload = envelope["payload"]
        if event_type not in CLIENT_EVENTS:
            self._error(conn, "unknown_type", event_type)
            return
        if event_type == "create_room":
            self._handle_create(conn, payload)
        elif event_type == "join_room":
            self._handle_join(conn, payload)
        elif event_type in ("post_message", "request_hint", "leave"):
            if conn.room_id is None:
                self._error(conn, "not_member", "join a room first")
                return
            runtime = self._rooms.get(conn.room_id)
            if runtime is None:
                self._error(conn, "unknown_room", conn.room_id)
                return
            if event_type == "post_message":
                runtime.enqueue(PostMessage(conn, str(payload.get("text", ""))))
            elif event_type == "request_hint":
                runtime.enqueue(HintRequest(conn))
            else:
                runtime.enqueue(Leave(conn))

    def _handle_create(self, conn: Connection, payload: dict) -> None:
        if conn.room_id is not None:
            self._error(conn, "already_joined", conn.room_id)
            return
        try:
            outcome = self.registry.create_room(str(payload.get("display_name", "")))
        except NameInvalid:
            self._error(conn, "name_invalid", "display name is empty")
            return
        except IdSpaceExhausted as exc:
            self._error(conn, "id_space_exhausted", str(exc))
            return
        runtime = RoomRuntime(self, outcome.room.id)
        self._rooms[outcome.room.id] = runtime
        conn.room_id = outcome.room.id
        self.unicast_room_created(conn, outcome.room.id)
        runtime.enqueue(
            InitialJoin(conn, outcome.participant.participant_id, outcome.auto_started)
        )

    def unicast_room_created(self, conn: Connection, room_id: str) -> None:
        conn.send(
            make_envelope(
                "room_created",
                room_id=room_id,
                sender="server",
                payload={"room_id": room_id},
                ts=self.clock(),
            )
        )

    def _handle_join(self, conn: Connection, payload: dict) -> None:
        if conn.room_id is not None:
            self._error(conn, "already_joined", conn.room_id)
            return
        room_id = str(payload.get("room_id", ""))
        runtime = self._rooms.get(room_id)
        if runtime is None:
            self._error(conn, "unknown_room", room_id)
            return
        conn.room_id = room_id
        runtime.enqueue(JoinRequest(conn, str(payload.get("display_name", ""))))
