"""Runs full sessions with persona clients against a live server.

The harness speaks only the public wire protocol, one WebSocket connection
per persona, so every run doubles as a protocol conformance check.  Turns
follow the moderator: when a question is asked the first persona with a
scripted line volunteers, every targeted prompt gives exactly that persona
the floor, and silent personas simply send nothing (the server's grace
timer moves the discussion along).

With no server address configured the harness starts an embedded gateway on
a loopback port, driven by a logical clock and seeded RNG, which makes fully
scripted runs byte-identical across invocations.
"""

from __future__ import annotations

import asyncio
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from websockets.asyncio.client import connect
from websockets.exceptions import ConnectionClosed

from ..dataset_store import Dataset, load_dataset
from ..llm_provider import (
    Message,
    Provider,
    provider_from_config,
    with_injected_latency,
)
from ..moderator_engine.session import FeedbackReport, StudentFeedback
from ..moderator_engine.transcript import TranscriptArchive, recount_stats
from ..moderator_engine.history import Role
from ..realtime_gateway import GatewayServer
from ..session_core import RoomRegistry
from .personas import Archetype, PersonaAgent, PersonaSpec
from .report import SimReport
from .stats import RecordingProvider, compute_latency_stats


class ServerUnreachable(RuntimeError):
    """Could not connect to the configured server."""


class SessionStalled(RuntimeError):
    """The watchdog saw no progress for the configured interval."""


class LogicalClock:
    """Deterministic clock: each reading advances by one step."""

    def __init__(self, start: float = 0.0, step: float = 1.0) -> None:
        self._next = start
        self._step = step

    def __call__(self) -> float:
        value = self._next
        self._next += self._step
        return value


@dataclass
class SimConfig:
    roster: list[PersonaSpec]
    dataset_path: str
    dataset_format: str = "canonical"
    capacity: Optional[int] = None
    min_qa_pairs: int = 1
    max_questions: int = 3
    max_tokens: int = 5000
    seed: int = 0
    moderator_provider: dict = field(
        default_factory=lambda: {"kind": "scripted", "default": "({directive})"}
    )
    persona_providers: dict[str, dict] = field(default_factory=dict)
    inject_delays: Optional[list[float]] = None
    host: Optional[str] = None
    port: Optional[int] = None
    watchdog_seconds: float = 60.0
    prompt_grace_seconds: float = 0.15
    output_dir: Optional[str] = None
    allow_unsafe_persona: bool = False
    base_dir: Optional[Path] = None

    @property
    def room_capacity(self) -> int:
        return self.capacity if self.capacity is not None else len(self.roster)

    @property
    def embedded(self) -> bool:
        return self.host is None

    def resolved_dataset_path(self) -> Path:
        path = Path(self.dataset_path)
        if self.base_dir is not None and not path.is_absolute():
            path = self.base_dir / path
        return path

    @classmethod
    def from_dict(cls, data: dict, base_dir: Optional[Path] = None) -> "SimConfig":
        roster = [PersonaSpec.from_dict(p) for p in data["roster"]]
        server = data.get("server", {})
        return cls(
            roster=roster,
            dataset_path=data["dataset_path"],
            dataset_format=data.get("dataset_format", "canonical"),
            capacity=data.get("capacity"),
            min_qa_pairs=int(data.get("min_qa_pairs", 1)),
            max_questions=int(data.get("max_questions", 3)),
            max_tokens=int(data.get("max_tokens", 5000)),
            seed=int(data.get("seed", 0)),
            moderator_provider=data.get(
                "moderator_provider", {"kind": "scripted", "default": "({directive})"}
            ),
            persona_providers=data.get("persona_providers", {}),
            inject_delays=data.get("inject_delays"),
            host=server.get("host"),
            port=server.get("port"),
            watchdog_seconds=float(data.get("watchdog_seconds", 60.0)),
            prompt_grace_seconds=float(data.get("prompt_grace_seconds", 0.15)),
            output_dir=data.get("output_dir"),
            allow_unsafe_persona=bool(data.get("allow_unsafe_persona", False)),
            base_dir=base_dir,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "SimConfig":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls.from_dict(data, base_dir=path.parent)


class SimClient:
    """One persona's WebSocket connection plus its received-envelope log."""

    def __init__(self, index: int, name: str, ws: Any, merged: asyncio.Queue) -> None:
        self.index = index
        self.name = name
        self.ws = ws
        self.log: list[dict] = []
        self._merged = merged
        self.reader = asyncio.create_task(self._read())

    async def _read(self) -> None:
        try:
            async for raw in self.ws:
                envelope = json.loads(raw)
                self.log.append(envelope)
                self._merged.put_nowait((self.index, envelope))
        except (ConnectionClosed, OSError):
            pass

    async def send(self, event_type: str, payload: dict) -> None:
        await self.ws.send(json.dumps({"type": event_type, "payload": payload}))

    async def close(self) -> None:
        self.reader.cancel()
        try:
            await self.ws.close()
        except Exception:
            pass


def _validate_personas(config: SimConfig) -> None:
    for spec in config.roster:
        if (
            spec.archetype is Archetype.TOXIC
            and not spec.scripted
            and not config.allow_unsafe_persona
        ):
            raise ValueError(
                f"backend-sourced toxic persona {spec.name!r} requires "
                "allow_unsafe_persona (--allow-unsafe-persona)"
            )


def _visible_history(log: list[dict]) -> list[Message]:
    messages: list[Message] = []
    for envelope in log:
        event_type = envelope.get("type")
        payload = envelope.get("payload", {})
        if event_type == "chat_broadcast":
            messages.append(
                Message(role="student", name=payload.get("name", ""), text=payload.get("text", ""))
            )
        elif event_type == "moderator_message":
            messages.append(
                Message(role="moderator", name="Moderator", text=payload.get("text_markdown", ""))
            )
    return messages


class _ReplayClock:
    def __init__(self) -> None:
        self.value = 0.0

    def __call__(self) -> float:
        return self.value


def transcript_from_client_log(
    log: list[dict], roster: list[str], capacity: int
) -> TranscriptArchive:
    """Reconstruct a transcript (with action markers) from broadcasts alone."""
    clock = _ReplayClock()
    archive = TranscriptArchive(clock)
    passage_title = ""
    for envelope in log:
        if envelope.get("type") == "session_started":
            passage_title = envelope.get("payload", {}).get("passage_title", "")
            break
    archive.append_marker(
        "meta",
        {
            "roster": roster,
            "capacity": capacity,
            "passage_title": passage_title,
            "source": "client_view",
        },
    )
    for envelope in log:
        event_type = envelope.get("type")
        payload = envelope.get("payload", {})
        clock.value = float(envelope.get("ts", 0.0))
        if event_type == "chat_broadcast":
            archive.append(Role.STUDENT, payload.get("name", ""), payload.get("text", ""))
        elif event_type == "moderator_message":
            directive = payload.get("action", "")
            head, _, tail = directive.partition(":")
            marker: dict = {"kind": head}
            if head in ("ask", "reveal") and tail.isdigit():
                marker["index"] = int(tail)
            elif head == "prompt":
                marker["target"] = tail
            archive.append_marker("action", marker)
            archive.append(Role.MODERATOR, "Moderator", payload.get("text_markdown", ""))
    return archive


async def _run_async(config: SimConfig, dataset: Dataset) -> SimReport:
    recorder: Optional[RecordingProvider] = None
    gateway: Optional[GatewayServer] = None
    base_dir = config.base_dir

    if config.embedded:
        clock = LogicalClock()
        registry = RoomRegistry(
            dataset,
            capacity=config.room_capacity,
            min_qa_pairs=config.min_qa_pairs,
            max_questions=config.max_questions,
            seed=config.seed,
            clock=clock,
        )
        moderator: Provider = provider_from_config(config.moderator_provider, base_dir)
        if config.inject_delays:
            moderator = with_injected_latency(moderator, config.inject_delays)
        recorder = RecordingProvider(moderator)
        gateway = GatewayServer(
            registry,
            recorder,
            port=0,
            budget=config.max_tokens,
            clock=clock,
            prompt_grace_seconds=config.prompt_grace_seconds,
            ping_interval=None,
            ping_timeout=None,
        )
        host, port = await gateway.start()
    else:
        host, port = config.host, config.port or 0

    bindings = {
        name: provider_from_config(spec, base_dir)
        for name, spec in config.persona_providers.items()
    }
    agents = []
    for spec in config.roster:
        provider = bindings.get(spec.backend_binding) if spec.backend_binding else None
        if spec.backend_binding and provider is None:
            raise ValueError(
                f"persona {spec.name!r} bound to unknown backend "
                f"{spec.backend_binding!r}"
            )
        agents.append(PersonaAgent(spec, provider))

    merged: asyncio.Queue = asyncio.Queue()
    clients: list[SimClient] = []
    pending: deque[tuple[int, dict]] = deque()

    async def next_event() -> tuple[int, dict]:
        if pending:
            return pending.popleft()
        try:
            return await asyncio.wait_for(merged.get(), config.watchdog_seconds)
        except asyncio.TimeoutError:
            raise SessionStalled(
                f"no session progress for {config.watchdog_seconds}s"
            ) from None

    async def await_type(index: int, event_type: str) -> dict:
        for i, (idx, envelope) in enumerate(pending):
            if idx == index and envelope.get("type") == event_type:
                del pending[i]
                return envelope
        while True:
            try:
                idx, envelope = await asyncio.wait_for(
                    merged.get(), config.watchdog_seconds
                )
            except asyncio.TimeoutError:
                raise SessionStalled(
                    f"no session progress for {config.watchdog_seconds}s"
                ) from None
            if idx == index and envelope.get("type") == event_type:
                return envelope
            pending.append((idx, envelope))

    try:
        for i, spec in enumerate(config.roster):
            try:
                ws = await connect(
                    f"ws://{host}:{port}", ping_interval=None, open_timeout=5
                )
            except (OSError, asyncio.TimeoutError) as exc:
                raise ServerUnreachable(f"cannot reach ws://{host}:{port}: {exc}") from exc
            clients.append(SimClient(i, spec.name, ws, merged))

        lead = clients[0]
        await lead.send("create_room", {"display_name": config.roster[0].name})
        created = await await_type(0, "room_created")
        room_id = created.get("payload", {}).get("room_id", "")
        await await_type(0, "joined")
        for client, spec in zip(clients[1:], config.roster[1:]):
            await client.send("join_room", {"room_id": room_id, "display_name": spec.name})
            await await_type(client.index, "joined")

        passage_title = ""
        collected: dict[str, dict] = {}
        volunteer_waiting = False
        hints_outstanding = 0
        current_question = 0

        async def speak(agent_index: int) -> None:
            agent = agents[agent_index]
            history = _visible_history(clients[agent_index].log)
            line = await asyncio.to_thread(agent.respond, history, "respond")
            if line is not None:
                await clients[agent_index].send("post_message", {"text": line})

        async def volunteer() -> None:
            for i, agent in enumerate(agents):
                if agent.has_spoken_line():
                    await speak(i)
                    return

        while len(collected) < len(config.roster):
            idx, envelope = await next_event()
            event_type = envelope.get("type")
            payload = envelope.get("payload", {})
            if event_type == "feedback_delivered":
                collected[config.roster[idx].name] = payload
                continue
            if event_type == "error":
                code = payload.get("code", "")
                if code == "shutting_down":
                    raise SessionStalled("server shut down mid-session")
                continue
            if idx != 0:
                continue
            if event_type == "session_started":
                passage_title = payload.get("passage_title", "")
            elif event_type == "moderator_message":
                directive = payload.get("action", "")
                head, _, tail = directive.partition(":")
                if head == "ask":
                    current_question = int(tail) if tail.isdigit() else 0
                    hints_outstanding = 0
                    for i, spec in enumerate(config.roster):
                        if current_question in spec.request_hint_on:
                            await clients[i].send("request_hint", {})
                            hints_outstanding += 1
                    if hints_outstanding:
                        volunteer_waiting = True
                    else:
                        await volunteer()
                elif head == "hint":
                    hints_outstanding = max(0, hints_outstanding - 1)
                    if hints_outstanding == 0 and volunteer_waiting:
                        volunteer_waiting = False
                        await volunteer()
                elif head == "prompt":
                    for i, spec in enumerate(config.roster):
                        if spec.name == tail:
                            await speak(i)
                            break

        roster_names = [spec.name for spec in config.roster]
        if gateway is not None:
            runtime = gateway._rooms.get(room_id)
            archive = runtime.session.archive if runtime and runtime.session else None
            transcript_lines = archive.to_lines() if archive else []
            stats_entries = archive.entries if archive else []
        else:
            archive = transcript_from_client_log(
                lead.log, roster_names, config.room_capacity
            )
            transcript_lines = archive.to_lines()
            stats_entries = archive.entries

        participation = {
            name: stats.message_count
            for name, stats in recount_stats(stats_entries).items()
        }
        feedback = FeedbackReport(
            per_student={
                name: StudentFeedback(
                    feedback_text=data.get("feedback_text", ""),
                    message_count=data.get("stats", {}).get("message_count", 0),
                    mean_message_tokens=data.get("stats", {}).get(
                        "mean_message_tokens", 0.0
                    ),
                    prompted_count=data.get("stats", {}).get("prompted_count", 0),
                    failed=data.get("failed", False),
                )
                for name, data in collected.items()
            }
        )
        records = list(recorder.records) if recorder is not None else []
        mean = std = None
        if records:
            mean, std = compute_latency_stats(records)
        report = SimReport(
            room_id=room_id,
            passage_title=passage_title,
            roster=roster_names,
            transcript_lines=transcript_lines,
            latency=records,
            mean_latency=mean,
            std_latency=std,
            feedback=feedback,
            participation={
                name: participation.get(name, 0) for name in roster_names
            },
            reached_feedback=len(collected) == len(config.roster),
        )
        return report
    finally:
        for client in clients:
            await client.close()
        if gateway is not None:
            await gateway.stop()


def run_simulation(config: SimConfig) -> SimReport:
    _validate_personas(config)
    dataset = load_dataset(config.resolved_dataset_path(), config.dataset_format)
    report = asyncio.run(_run_async(config, dataset))
    if config.output_dir is not None:
        out = Path(config.output_dir)
        if config.base_dir is not None and not out.is_absolute():
            out = config.base_dir / out
        report.write(out)
    return report
