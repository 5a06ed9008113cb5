"""Latency records and the statistics stamped into every report.

The spread is the population standard deviation (divisor n), computed at
full float precision; reports carry the formula name so readers know which
convention the sigma uses.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Sequence

from ..llm_provider import Provider, ProviderRequest, ProviderResponse

STD_FORMULA = "population (divisor n)"


class EmptyRecords(ValueError):
    """Statistics over zero records are undefined."""


@dataclass(frozen=True)
class LatencyRecord:
    interaction_index: int
    seconds: float
    action_kind: str

    def to_payload(self) -> dict:
        return {
            "interaction_index": self.interaction_index,
            "seconds": self.seconds,
            "action_kind": self.action_kind,
        }


def compute_latency_stats(records: Sequence[LatencyRecord | float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation of the latencies."""
    if not records:
        raise EmptyRecords("no latency records")
    values = [r.seconds if isinstance(r, LatencyRecord) else float(r) for r in records]
    mean = sum(values) / len(values)
    variance = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(variance)


class RecordingProvider(Provider):
    """Wraps a backend and records one latency entry per generate call.

    Records are tagged with the directive head (``ask``, ``prompt``,
    ``reveal``, ``feedback``, ...), so action-specific latency can be
    extracted from a report afterwards.
    """

    def __init__(self, inner: Provider) -> None:
        self.inner = inner
        self.records: list[LatencyRecord] = []
        self._lock = threading.Lock()

    @property
    def tag(self) -> str:  # type: ignore[override]
        return self.inner.tag

    def generate(self, request: ProviderRequest) -> ProviderResponse:
        response = self.inner.generate(request)
        kind = request.directive.split(":", 1)[0]
        with self._lock:
            self.records.append(
                LatencyRecord(
                    interaction_index=len(self.records),
                    seconds=response.latency_seconds,
                    action_kind=kind,
                )
            )
        return response
