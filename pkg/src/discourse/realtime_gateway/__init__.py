"""Wire protocol and WebSocket gateway for live sessions."""

from .protocol import (
    CLIENT_EVENTS,
    SERVER_EVENTS,
    ProtocolError,
    encode_envelope,
    make_envelope,
    parse_envelope,
)
from .server import GatewayServer

__all__ = [
    "CLIENT_EVENTS",
    "SERVER_EVENTS",
    "GatewayServer",
    "ProtocolError",
    "encode_envelope",
    "make_envelope",
    "parse_envelope",
]
