"""Simulation report assembly and file output."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..moderator_engine.session import FeedbackReport
from .stats import STD_FORMULA, LatencyRecord


@dataclass
class SimReport:
    room_id: str
    passage_title: str
    roster: list[str]
    transcript_lines: list[str]
    latency: list[LatencyRecord] = field(default_factory=list)
    mean_latency: Optional[float] = None
    std_latency: Optional[float] = None
    std_formula: str = STD_FORMULA
    feedback: FeedbackReport = field(default_factory=FeedbackReport)
    participation: dict[str, int] = field(default_factory=dict)
    reached_feedback: bool = False

    def to_payload(self) -> dict:
        return {
            "room_id": self.room_id,
            "passage_title": self.passage_title,
            "roster": self.roster,
            "reached_feedback": self.reached_feedback,
            "participation": self.participation,
            "latency": [r.to_payload() for r in self.latency],
            "mean_latency": self.mean_latency,
            "std_latency": self.std_latency,
            "std_formula": self.std_formula,
            "feedback": self.feedback.to_payload(),
        }

    def to_markdown(self) -> str:
        lines = [
            "# Simulation report",
            "",
            f"- room: `{self.room_id}`",
            f"- passage: {self.passage_title}",
            f"- roster: {', '.join(self.roster)}",
            f"- reached feedback phase: {'yes' if self.reached_feedback else 'no'}",
            "",
            "## Participation",
            "",
            "| student | messages |",
            "| --- | --- |",
        ]
        for name in self.roster:
            lines.append(f"| {name} | {self.participation.get(name, 0)} |")
        lines += ["", "## Moderator latency", ""]
        if self.latency:
            lines += [
                f"mean {self.mean_latency:.3f} s, sigma {self.std_latency:.3f} s "
                f"({self.std_formula}) over {len(self.latency)} calls",
                "",
                "| call | action | seconds |",
                "| --- | --- | --- |",
            ]
            for record in self.latency:
                lines.append(
                    f"| {record.interaction_index} | {record.action_kind} "
                    f"| {record.seconds:.3f} |"
                )
        else:
            lines.append("not recorded (external server)")
        lines += ["", "## Feedback", ""]
        for name in self.roster:
            entry = self.feedback.per_student.get(name)
            if entry is None:
                continue
            lines.append(f"### {name}")
            lines.append("")
            lines.append(entry.feedback_text)
            lines.append("")
        return "\n".join(lines)

    def write(self, output_dir: str | Path) -> dict[str, Path]:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "transcript": out / "transcript.jsonl",
            "report_json": out / "report.json",
            "report_md": out / "report.md",
        }
        paths["transcript"].write_text(
            "\n".join(self.transcript_lines) + "\n", encoding="utf-8"
        )
        paths["report_json"].write_text(
            json.dumps(self.to_payload(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        paths["report_md"].write_text(self.to_markdown() + "\n", encoding="utf-8")
        return paths
