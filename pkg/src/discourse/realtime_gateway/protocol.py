"""Envelope vocabulary and framing for the session wire protocol.

Transport is a persistent WebSocket connection; every frame is one UTF-8
JSON object (the envelope).  Field names are fixed; unknown extra fields
are ignored on receipt so the vocabulary can grow without breaking older
clients.

client -> server:
    create_room {display_name}
    join_room {room_id, display_name}
    post_message {text}
    request_hint {}
    leave {}

server -> client:
    room_created {room_id}
    joined {roster, capacity}
    room_full {}
    session_started {passage_title}
    chat_broadcast {name, text}
    moderator_message {text_markdown, action}
    question_revealed {index, answer}
    feedback_delivered {feedback_text, stats}
    error {code, detail}

Broadcast envelopes carry a per-room strictly increasing ``seq``; unicast
envelopes (room_created, room_full, feedback_delivered, error) carry none.
"""

from __future__ import annotations

import json
import time
from typing import Any, Optional

CLIENT_EVENTS = frozenset(
    {"create_room", "join_room", "post_message", "request_hint", "leave"}
)

SERVER_EVENTS = frozenset(
    {
        "room_created",
        "joined",
        "room_full",
        "session_started",
        "chat_broadcast",
        "moderator_message",
        "question_revealed",
        "feedback_delivered",
        "error",
    }
)


class ProtocolError(ValueError):
    """Malformed frame: not JSON, not an object, or missing a valid type."""


def make_envelope(
    type: str,
    *,
    room_id: str = "",
    sender: str = "",
    payload: Optional[dict[str, Any]] = None,
    seq: Optional[int] = None,
    ts: Optional[float] = None,
) -> dict[str, Any]:
    envelope: dict[str, Any] = {
        "type": type,
        "room_id": room_id,
        "sender": sender,
        "payload": payload or {},
        "ts": time.time() if ts is None else ts,
    }
    if seq is not None:
        envelope["seq"] = seq
    return envelope


def encode_envelope(envelope: dict[str, Any]) -> str:
    return json.dumps(envelope, ensure_ascii=False)


def parse_envelope(raw: str | bytes) -> dict[str, Any]:
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"frame is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ProtocolError("frame is not a JSON object")
    event_type = data.get("type")
    if not isinstance(event_type, str) or not event_type:
        raise ProtocolError("frame has no event type")
    payload = data.get("payload", {})
    if not isinstance(payload, dict):
        raise ProtocolError("payload must be an object")
    data["payload"] = payload
    return data
