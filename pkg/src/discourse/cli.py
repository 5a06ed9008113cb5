"""Command line entry points: serve, simulate, validate-dataset, feedback."""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

from . import dataset_store
from .config import ConfigError, resolve_config
from .llm_provider import ProviderError, provider_from_config
from .moderator_engine.prompts import SYSTEM_PROMPT_TEMPLATE
from .moderator_engine.session import feedback_for_roster
from .moderator_engine.transcript import (
    TranscriptError,
    read_archive,
    session_meta,
)
from .moderator_engine.history import Role
from .persona_sim import (
    ServerUnreachable,
    SessionStalled,
    SimConfig,
    run_simulation,
)
from .realtime_gateway import GatewayServer
from .session_core import RoomRegistry

BUNDLED_SIM_CONFIGS = {"table3": "table3_sim.json", "latency9": "latency_sim.json"}


def _add_server_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--host", help="listen address (default 127.0.0.1)")
    parser.add_argument("--port", type=int, help="listen port; 0 picks a free one")
    parser.add_argument(
        "--max-students", type=int, dest="max_students", help="room capacity"
    )
    parser.add_argument(
        "--max-tokens",
        type=int,
        dest="max_tokens",
        help="conversation window token budget",
    )
    parser.add_argument(
        "--min-qa-pairs",
        type=int,
        dest="min_qa_pairs",
        help="passage eligibility threshold",
    )
    parser.add_argument(
        "--max-questions",
        type=int,
        dest="max_questions",
        help="questions per session",
    )
    parser.add_argument("--dataset", dest="dataset_path", help="dataset file path")
    parser.add_argument(
        "--dataset-format",
        dest="dataset_format",
        choices=sorted(dataset_store.ADAPTERS),
    )
    parser.add_argument(
        "--seed", type=int, help="seed for room ids and passage selection"
    )
    parser.add_argument(
        "--prompt-grace-seconds",
        type=float,
        dest="prompt_grace_seconds",
        help="silence window before the moderator moves on",
    )
    parser.add_argument(
        "--provider-kind",
        dest="provider_kind",
        choices=["scripted", "canned", "replay", "remote"],
    )
    parser.add_argument(
        "--provider-base-url", dest="provider_base_url", help="remote backend URL"
    )
    parser.add_argument(
        "--provider-model", dest="provider_model_name", help="remote model name"
    )
    parser.add_argument(
        "--provider-script", dest="provider_path", help="replay script path"
    )


async def _serve(config, dataset) -> None:
    provider = provider_from_config(config.provider)
    registry = RoomRegistry(
        dataset,
        capacity=config.max_students,
        min_qa_pairs=config.min_qa_pairs,
        max_questions=config.max_questions,
        seed=config.seed,
    )
    gateway = GatewayServer(
        registry,
        provider,
        host=config.host,
        port=config.port,
        budget=config.max_tokens,
        prompt_grace_seconds=config.prompt_grace_seconds,
    )
    try:
        host, port = await gateway.start()
    except OSError as exc:
        raise ConfigError("port", f"cannot bind {config.host}:{config.port}: {exc}")
    print(
        f"discourse server listening on {host}:{port} "
        f"dataset={dataset.name} capacity={config.max_students}",
        flush=True,
    )
    try:
        await asyncio.Future()
    except asyncio.CancelledError:
        pass
    finally:
        await gateway.stop()


def cmd_serve(args: argparse.Namespace) -> int:
    flags = {}
    for key in (
        "host",
        "port",
        "max_students",
        "max_tokens",
        "min_qa_pairs",
        "max_questions",
        "dataset_path",
        "dataset_format",
        "seed",
        "prompt_grace_seconds",
    ):
        flags[key] = getattr(args, key, None)
    for key in ("kind", "base_url", "path"):
        flags[f"provider_{key}"] = getattr(args, f"provider_{key}", None)
    flags["provider_model_name"] = getattr(args, "provider_model_name", None)
    try:
        config = resolve_config(flags, config_file=args.config)
        dataset = dataset_store.load_dataset(config.dataset_path, config.dataset_format)
    except (ConfigError, dataset_store.DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        asyncio.run(_serve(config, dataset))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("shutting down", flush=True)
    return 0


def _bundled_config_path(name: str) -> Path:
    filename = BUNDLED_SIM_CONFIGS[name]
    return Path(str(resources.files("discourse").joinpath("data", filename)))


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        if args.bundled:
            config = SimConfig.from_file(_bundled_config_path(args.bundled))
        else:
            config = SimConfig.from_file(args.sim_config)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: cannot load sim config: {exc}", file=sys.stderr)
        return 1
    if args.output_dir:
        config.output_dir = str(Path(args.output_dir).resolve())
    if args.inject_delays:
        config.inject_delays = [float(x) for x in args.inject_delays.split(",")]
    if args.allow_unsafe_persona:
        config.allow_unsafe_persona = True
    try:
        report = run_simulation(config)
    except ServerUnreachable as exc:
        print(f"error: ServerUnreachable: {exc}", file=sys.stderr)
        return 2
    except (SessionStalled, ProviderError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(
        f"simulation complete: room={report.room_id} "
        f"participants={len(report.roster)} "
        f"reached_feedback={report.reached_feedback}",
        flush=True,
    )
    if report.mean_latency is not None:
        print(
            f"moderator latency: mean={report.mean_latency:.3f}s "
            f"sigma={report.std_latency:.3f}s over {len(report.latency)} calls "
            f"({report.std_formula})",
            flush=True,
        )
    return 0 if report.reached_feedback else 3


def cmd_validate_dataset(args: argparse.Namespace) -> int:
    try:
        dataset = dataset_store.load_dataset(args.path, args.dataset_format)
    except dataset_store.DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = dataset_store.validate_dataset(dataset)
    print(report.render(), flush=True)
    return 0


def cmd_feedback(args: argparse.Namespace) -> int:
    try:
        entries = read_archive(args.transcript)
    except (OSError, TranscriptError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    meta = session_meta(entries) or {}
    roster = meta.get("roster")
    if not roster:
        roster = sorted(
            {e.author_name for e in entries if e.author_role is Role.STUDENT}
        )
    if not roster:
        print("error: transcript contains no students", file=sys.stderr)
        return 1
    provider_spec = {"kind": args.provider_kind or "canned"}
    if args.provider_base_url:
        provider_spec["base_url"] = args.provider_base_url
    if args.provider_model_name:
        provider_spec["model_name"] = args.provider_model_name
    if args.provider_path:
        provider_spec["path"] = args.provider_path
    try:
        provider = provider_from_config(provider_spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    system_prompt = SYSTEM_PROMPT_TEMPLATE.format(
        roster="\n".join(f"- {name}" for name in roster),
        quiz=f"(archived session {meta.get('passage_title', '')})",
    )
    conversation = [e for e in entries if e.author_role is not Role.SYSTEM]
    report = feedback_for_roster(roster, system_prompt, conversation, entries, provider)
    payload = json.dumps(report.to_payload(), indent=2, ensure_ascii=False)
    if args.output:
        Path(args.output).write_text(payload + "\n", encoding="utf-8")
        print(f"feedback written to {args.output}", flush=True)
    else:
        print(payload, flush=True)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="discourse",
        description="AI-moderated collaborative discussion server and tooling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the realtime discussion server")
    _add_server_flags(serve)
    serve.set_defaults(func=cmd_serve)

    simulate = sub.add_parser("simulate", help="run a persona simulation")
    simulate.add_argument("sim_config", nargs="?", help="sim config JSON path")
    simulate.add_argument(
        "--bundled", choices=sorted(BUNDLED_SIM_CONFIGS), help="run a bundled config"
    )
    simulate.add_argument("--output-dir", dest="output_dir")
    simulate.add_argument(
        "--inject-delays", dest="inject_delays", help="comma-separated seconds"
    )
    simulate.add_argument(
        "--allow-unsafe-persona", action="store_true", dest="allow_unsafe_persona"
    )
    simulate.set_defaults(func=cmd_simulate)

    validate = sub.add_parser("validate-dataset", help="load and lint a dataset")
    validate.add_argument("path")
    validate.add_argument(
        "--dataset-format",
        dest="dataset_format",
        default="canonical",
        choices=sorted(dataset_store.ADAPTERS),
    )
    validate.set_defaults(func=cmd_validate_dataset)

    feedback = sub.add_parser(
        "feedback", help="regenerate feedback from a transcript archive"
    )
    feedback.add_argument("transcript")
    feedback.add_argument("--output")
    feedback.add_argument(
        "--provider-kind",
        dest="provider_kind",
        choices=["scripted", "canned", "replay", "remote"],
    )
    feedback.add_argument("--provider-base-url", dest="provider_base_url")
    feedback.add_argument("--provider-model", dest="provider_model_name")
    feedback.add_argument("--provider-script", dest="provider_path")
    feedback.set_defaults(func=cmd_feedback)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and not args.sim_config and not args.bundled:
        parser.error("simulate needs a config path or --bundled NAME")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
