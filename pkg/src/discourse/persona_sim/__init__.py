"""Headless multi-persona simulation harness and experiment reporting."""

from .personas import Archetype, PersonaAgent, PersonaSpec, ScriptExhausted
from .stats import EmptyRecords, LatencyRecord, RecordingProvider, compute_latency_stats
from .harness import (
    ServerUnreachable,
    SessionStalled,
    SimConfig,
    run_simulation,
)
from .report import SimReport

__all__ = [
    "Archetype",
    "EmptyRecords",
    "LatencyRecord",
    "PersonaAgent",
    "PersonaSpec",
    "RecordingProvider",
    "ScriptExhausted",
    "ServerUnreachable",
    "SessionStalled",
    "SimConfig",
    "SimReport",
    "compute_latency_stats",
    "run_simulation",
]
