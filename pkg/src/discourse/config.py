"""Server configuration: defaults, config file, environment, flags.

Precedence, highest first: command-line flag, environment variable
(``DISCOURSE_*``), config file key, built-in default.  Validation happens
once after merging, with field-level diagnostics.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

DEFAULT_PROVIDER: dict = {"kind": "canned"}

ENV_PREFIX = "DISCOURSE_"

# field name -> (env var suffix, parser)
_SCALAR_FIELDS: dict[str, tuple[str, Any]] = {
    "max_students": ("MAX_STUDENTS", int),
    "max_tokens": ("MAX_TOKENS", int),
    "min_qa_pairs": ("MIN_QA_PAIRS", int),
    "max_questions": ("MAX_QUESTIONS", int),
    "dataset_path": ("DATASET_PATH", str),
    "dataset_format": ("DATASET_FORMAT", str),
    "host": ("HOST", str),
    "port": ("PORT", int),
    "seed": ("SEED", int),
    "prompt_grace_seconds": ("PROMPT_GRACE_SECONDS", float),
}

_PROVIDER_FIELDS: dict[str, str] = {
    "kind": "PROVIDER_KIND",
    "base_url": "PROVIDER_BASE_URL",
    "model_name": "PROVIDER_MODEL",
}


class ConfigError(Exception):
    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"config field {field_name!r}: {message}")
        self.field_name = field_name


@dataclass
class ServerConfig:
    max_students: int = 4
    max_tokens: int = 5000
    min_qa_pairs: int = 1
    max_questions: int = 3
    dataset_path: str = ""
    dataset_format: str = "canonical"
    host: str = "127.0.0.1"
    port: int = 8765
    seed: Optional[int] = None
    prompt_grace_seconds: float = 20.0
    provider: dict = field(default_factory=lambda: dict(DEFAULT_PROVIDER))

    def validate(self, env: Mapping[str, str] = os.environ) -> None:
        for name in ("max_students", "max_tokens", "min_qa_pairs", "max_questions"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.prompt_grace_seconds <= 0:
            raise ConfigError("prompt_grace_seconds", "must be > 0")
        if not self.dataset_path:
            raise ConfigError("dataset_path", "is required")
        kind = self.provider.get("kind")
        if kind not in ("scripted", "canned", "replay", "remote"):
            raise ConfigError("provider.kind", f"unknown provider kind {kind!r}")
        if kind == "remote":
            for key in ("base_url", "model_name"):
                if not self.provider.get(key):
                    raise ConfigError(f"provider.{key}", "required for remote backend")
            key_env = self.provider.get("api_key_env", "DISCOURSE_PROVIDER_KEY")
            if not env.get(key_env):
                raise ConfigError(
                    "provider", f"remote backend selected but {key_env} is not set"
                )
        if kind == "replay" and not self.provider.get("path"):
            raise ConfigError("provider.path", "required for replay backend")


def resolve_config(
    flags: Optional[Mapping[str, Any]] = None,
    env: Mapping[str, str] = os.environ,
    config_file: Optional[str | Path] = None,
) -> ServerConfig:
    """Merge flag/env/file/default layers into a validated ServerConfig."""
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    file_data: dict = {}
    if config_file is not None:
        try:
            file_data = json.loads(Path(config_file).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError("config_file", f"{config_file} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config_file", f"invalid JSON: {exc}") from exc
        if not isinstance(file_data, dict):
            raise ConfigError("config_file", "top level must be an object")

    config = ServerConfig()
    for name, (suffix, parse) in _SCALAR_FIELDS.items():
        value: Any = None
        if name in flags:
            value = flags[name]
        elif ENV_PREFIX + suffix in env:
            raw = env[ENV_PREFIX + suffix]
            try:
                value = parse(raw)
            except ValueError:
                raise ConfigError(name, f"cannot parse {raw!r}") from None
        elif name in file_data:
            value = file_data[name]
        if value is not None:
            try:
                setattr(config, name, parse(value))
            except (TypeError, ValueError):
                raise ConfigError(name, f"cannot parse {value!r}") from None

    provider = dict(DEFAULT_PROVIDER)
    if isinstance(file_data.get("provider"), dict):
        provider = dict(file_data["provider"])
    for key, suffix in _PROVIDER_FIELDS.items():
        if ENV_PREFIX + suffix in env:
            provider[key] = env[ENV_PREFIX + suffix]
    for key in ("kind", "base_url", "model_name", "path"):
        flag_key = f"provider_{key}"
        if flag_key in flags:
            provider[key] = flags[flag_key]
    config.provider = provider

    config.validate(env)
    return config
