"""Latency statistics, persona behavior, and full simulation runs."""

from __future__ import annotations

import json
import math
import random
from pathlib import Path

import pytest

from discourse.llm_provider import Message, ProviderRequest, ScriptedProvider
from discourse.moderator_engine.transcript import read_archive
from discourse.persona_sim import (
    Archetype,
    EmptyRecords,
    LatencyRecord,
    PersonaAgent,
    PersonaSpec,
    RecordingProvider,
    ServerUnreachable,
    SessionStalled,
    SimConfig,
    compute_latency_stats,
    run_simulation,
)
from discourse.persona_sim.personas import PASSIVE_DEFAULT_LINE, ScriptExhausted

DATA_DIR = Path(__file__).resolve().parent.parent / "src" / "discourse" / "data"


def records(values):
    return [
        LatencyRecord(interaction_index=i, seconds=v, action_kind="ask")
        for i, v in enumerate(values)
    ]


class TestLatencyStats:
    def test_singleton(self):
        assert compute_latency_stats(records([2.0])) == (2.0, 0.0)

    def test_empty_rejected(self):
        with pytest.raises(EmptyRecords):
            compute_latency_stats([])

    def test_matches_brute_force_oracle(self):
        rng = random.Random(17)
        for _ in range(200):
            values = [rng.uniform(0.0, 3.0) for _ in range(rng.randrange(1, 20))]
            mean, std = compute_latency_stats(records(values))
            oracle_mean = sum(values) / len(values)
            oracle_std = math.sqrt(
                sum((v - oracle_mean) ** 2 for v in values) / len(values)
            )
            assert mean == pytest.approx(oracle_mean, abs=1e-12)
            assert std == pytest.approx(oracle_std, abs=1e-12)

    def test_translation_invariance(self):
        values = [0.4, 1.1, 2.2, 0.9]
        mean, std = compute_latency_stats(records(values))
        shifted_mean, shifted_std = compute_latency_stats(
            records([v + 10.0 for v in values])
        )
        assert shifted_mean == pytest.approx(mean + 10.0)
        assert shifted_std == pytest.approx(std)

    def test_nine_interaction_vector_rounds_to_headline_values(self):
        # Nine latencies with one slow intervention spike; population sigma.
        nine = [1.5631] * 4 + [1.9894] * 4 + [2.35]
        mean, std = compute_latency_stats(records(nine))
        assert round(mean, 2) == 1.84
        assert round(std, 2) == 0.27

    def test_recording_provider_tags_action_kinds(self):
        recorder = RecordingProvider(ScriptedProvider({}, default="x"))
        for directive in ("open", "ask:0", "prompt:Ana", "feedback:Ana"):
            recorder.generate(
                ProviderRequest(system_prompt="s", messages=(), directive=directive)
            )
        kinds = [r.action_kind for r in recorder.records]
        assert kinds == ["open", "ask", "prompt", "feedback"]
        assert [r.interaction_index for r in recorder.records] == [0, 1, 2, 3]


class TestPersonaSpec:
    def test_backend_persona_requires_three_components(self):
        with pytest.raises(ValueError, match="context_rule"):
            PersonaSpec(
                name="Jordan",
                archetype=Archetype.TOXIC,
                identity_directives="sarcastic",
                context_rule="",
                response_constraints="stay in character",
                backend_binding="alt",
            )

    def test_scripted_persona_needs_no_prompt_components(self):
        spec = PersonaSpec(
            name="Daniel", archetype=Archetype.CONSTRUCTIVE, scripted_lines=["hi"]
        )
        assert spec.scripted

    def test_no_response_source_rejected(self):
        with pytest.raises(ValueError, match="response source"):
            PersonaSpec(name="X", archetype=Archetype.PASSIVE)

    def test_system_prompt_contains_components(self):
        spec = PersonaSpec(
            name="Jordan",
            archetype=Archetype.TOXIC,
            identity_directives="sharp sarcasm",
            context_rule="reference the chat history",
            response_constraints="no meta-commentary",
            backend_binding="alt",
        )
        prompt = spec.system_prompt()
        for part in ("sharp sarcasm", "reference the chat history", "no meta-commentary"):
            assert part in prompt


class TestPersonaAgent:
    def test_scripted_lines_consumed_in_order(self):
        agent = PersonaAgent(
            PersonaSpec(
                name="A", archetype=Archetype.CONSTRUCTIVE, scripted_lines=["one", "two"]
            )
        )
        assert agent.respond([]) == "one"
        assert agent.respond([]) == "two"

    def test_passive_default_after_script(self):
        agent = PersonaAgent(
            PersonaSpec(name="Ethan", archetype=Archetype.PASSIVE, scripted_lines=[])
        )
        assert agent.respond([]) == PASSIVE_DEFAULT_LINE
        assert agent.respond([]) == PASSIVE_DEFAULT_LINE

    def test_none_line_means_silent(self):
        agent = PersonaAgent(
            PersonaSpec(
                name="B", archetype=Archetype.OFF_TOPIC, scripted_lines=[None, "late"]
            )
        )
        assert not agent.has_spoken_line()
        assert agent.respond([]) is None
        assert agent.has_spoken_line()
        assert agent.respond([]) == "late"

    def test_non_passive_exhaustion_raises(self):
        agent = PersonaAgent(
            PersonaSpec(name="C", archetype=Archetype.TOXIC, scripted_lines=["only"])
        )
        agent.respond([])
        with pytest.raises(ScriptExhausted):
            agent.respond([])

    def test_backend_agent_routes_to_its_own_provider(self):
        jordan_provider = ScriptedProvider({}, default="jordan backend line")
        daniel_provider = ScriptedProvider({}, default="daniel backend line")
        jordan = PersonaAgent(
            PersonaSpec(
                name="Jordan",
                archetype=Archetype.TOXIC,
                identity_directives="i",
                context_rule="c",
                response_constraints="r",
                backend_binding="alt",
            ),
            jordan_provider,
        )
        daniel = PersonaAgent(
            PersonaSpec(
                name="Daniel",
                archetype=Archetype.CONSTRUCTIVE,
                identity_directives="i",
                context_rule="c",
                response_constraints="r",
                backend_binding="main",
            ),
            daniel_provider,
        )
        history = [Message(role="moderator", name="Moderator", text="question?")]
        assert jordan.respond(history) == "jordan backend line"
        assert daniel.respond(history) == "daniel backend line"


def table3_config(**overrides) -> SimConfig:
    config = SimConfig.from_file(DATA_DIR / "table3_sim.json")
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


class TestRunSimulation:
    def test_table3_reaches_feedback_with_four_entries(self):
        report = run_simulation(table3_config())
        assert report.reached_feedback
        assert set(report.feedback.per_student) == {
            "Ethan",
            "Jordan",
            "Sophia",
            "Daniel",
        }
        assert report.roster == ["Ethan", "Jordan", "Sophia", "Daniel"]

    def test_table3_participation_matches_transcript_recount(self, tmp_path):
        config = table3_config(output_dir=str(tmp_path / "out"))
        report = run_simulation(config)
        path = tmp_path / "out" / "transcript.jsonl"
        entries = read_archive(path)
        from discourse.moderator_engine import recount_stats

        stats = recount_stats(entries)
        for name in report.roster:
            assert report.participation[name] == stats[name].message_count
        report_json = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report_json["reached_feedback"] is True
        assert (tmp_path / "out" / "report.md").exists()

    def test_passive_ethan_gets_prompted_every_question(self):
        report = run_simulation(table3_config())
        ethan = report.feedback.per_student["Ethan"]
        assert ethan.prompted_count == 2  # one per question
        assert report.participation["Ethan"] == 2  # says "I don't know" when prompted

    def test_under_capacity_roster_stalls(self):
        config = table3_config(capacity=4, watchdog_seconds=1.5)
        config.roster = config.roster[:3]
        with pytest.raises(SessionStalled):
            run_simulation(config)

    def test_unreachable_server(self):
        config = table3_config(host="127.0.0.1", port=9)
        config.watchdog_seconds = 2.0
        with pytest.raises(ServerUnreachable):
            run_simulation(config)

    def test_backend_toxic_persona_requires_flag(self):
        config = table3_config()
        config.roster[1] = PersonaSpec(
            name="Jordan",
            archetype=Archetype.TOXIC,
            identity_directives="i",
            context_rule="c",
            response_constraints="r",
            backend_binding="alt",
        )
        config.persona_providers = {"alt": {"kind": "scripted", "default": "grr"}}
        with pytest.raises(ValueError, match="allow_unsafe_persona"):
            run_simulation(config)
        config.allow_unsafe_persona = True
        report = run_simulation(config)
        assert report.reached_feedback

    def test_deterministic_transcripts_across_runs(self):
        first = run_simulation(table3_config())
        second = run_simulation(table3_config())
        assert first.transcript_lines == second.transcript_lines
        assert first.room_id == second.room_id

    def test_table3_transcript_carries_persona_dialogue(self):
        report = run_simulation(table3_config())
        transcript = "\n".join(report.transcript_lines)
        assert "I don't know" in transcript  # Ethan's minimal answers
        assert "groundbreaking plot twist" in transcript  # Jordan's sarcasm
        assert "cat video" in transcript  # Sophia's tangent
        assert "patience" in transcript  # Daniel's constructive angle

    def test_report_stats_self_consistent(self):
        report = run_simulation(table3_config())
        mean, std = compute_latency_stats(report.latency)
        assert report.mean_latency == mean
        assert report.std_latency == std


class TestExternalServerMode:
    def test_simulation_over_external_server(self, tmp_path):
        import re
        import subprocess
        import sys

        proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "discourse.cli",
                "serve",
                "--dataset",
                str(DATA_DIR / "storybook.jsonl"),
                "--port",
                "0",
                "--max-students",
                "2",
                "--min-qa-pairs",
                "3",
                "--max-questions",
                "1",
                "--prompt-grace-seconds",
                "0.2",
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        try:
            ready = proc.stdout.readline()
            match = re.search(r"listening on ([\d.]+):(\d+)", ready)
            assert match, ready
            config = SimConfig(
                roster=[
                    PersonaSpec(
                        name="Ana",
                        archetype=Archetype.CONSTRUCTIVE,
                        scripted_lines=["The cat waited."],
                    ),
                    PersonaSpec(
                        name="Ben",
                        archetype=Archetype.CONSTRUCTIVE,
                        scripted_lines=["Patience won."],
                    ),
                ],
                dataset_path=str(DATA_DIR / "storybook.jsonl"),
                host=match.group(1),
                port=int(match.group(2)),
                watchdog_seconds=15.0,
            )
            report = run_simulation(config)
            assert report.reached_feedback
            assert report.latency == []  # not instrumentable over the wire
            assert report.mean_latency is None
            assert report.participation == {"Ana": 1, "Ben": 1}
            # Client-view transcript reconstruction carries action markers.
            assert any('"kind": "reveal"' in line.replace("'", '"') or "reveal" in line
                       for line in report.transcript_lines)
            report.write(tmp_path / "ext")
            assert (tmp_path / "ext" / "transcript.jsonl").exists()
        finally:
            proc.terminate()
            proc.wait(timeout=10)
