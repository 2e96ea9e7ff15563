import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from .exceptions import ConfigError
from .models import ExperimentConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Settings:
    out_root: Path
    threads: int
    log_level: str


settings: Optional[Settings] = None


def initialize_settings() -> Settings:
    """Read ABF_* variables (after loading an optional .env file) into the settings singleton."""
    global settings

    load_dotenv()

    raw_threads = os.getenv("ABF_THREADS", "1")
    try:
        threads = int(raw_threads)
    except ValueError:
        raise ConfigError(f"Invalid ABF_THREADS value: {raw_threads!r}") from None
    if threads < 1:
        raise ConfigError(f"ABF_THREADS must be >= 1, got {threads}")

    settings = Settings(
        out_root=Path(os.getenv("ABF_OUT", "./out")),
        threads=threads,
        log_level=os.getenv("ABF_LOG_LEVEL", "INFO").upper(),
    )
    return settings


def get_settings() -> Settings:
    if settings is None:
        raise RuntimeError("Settings not initialized.")
    return settings


def _read_config_file(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            return json.loads(path.read_text())
        with path.open("rb") as handle:
            return tomllib.load(handle)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Could not parse config file {path}: {e}") from None


def parse_override_value(raw: str) -> Any:
    """Interpret an override value as a TOML scalar or array, else as a plain string."""
    try:
        return tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        return raw


def _section_fields() -> Dict[str, Iterable[str]]:
    sections = {}
    for name, info in ExperimentConfig.model_fields.items():
        annotation = info.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            sections[name] = annotation.model_fields.keys()
    return sections


def apply_override(data: Dict[str, Any], override: str) -> None:
    """Apply one ``key=value`` override in place; bare keys must name exactly one field."""
    key, sep, raw = override.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"Override must look like key=value, got {override!r}")
    value = parse_override_value(raw.strip())

    if "." in key:
        path = key.split(".")
    elif key in ExperimentConfig.model_fields and key not in _section_fields():
        path = [key]
    else:
        owners = [section for section, fields in _section_fields().items() if key in fields]
        if len(owners) != 1:
            hint = "unknown key" if not owners else f"ambiguous, found in {', '.join(owners)}"
            raise ConfigError(f"Cannot apply override {key!r}: {hint}; use section.key")
        path = [owners[0], key]

    target = data
    for part in path[:-1]:
        node = target.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"Cannot apply override {key!r}: {part!r} is not a section")
        target = node
    target[path[-1]] = value


def load_experiment_config(
    path: Optional[Path] = None,
    overrides: Iterable[str] = (),
    defaults: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """
    Load a TOML (or emitted JSON) config, apply overrides and validate.

    ``defaults`` fill top-level keys the file leaves unset; overrides win over both.
    """
    data: Dict[str, Any] = {} if path is None else _read_config_file(Path(path))
    for key, value in (defaults or {}).items():
        data.setdefault(key, value)
    for override in overrides:
        apply_override(data, override)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from None


def emit_config(config: ExperimentConfig) -> str:
    return config.model_dump_json(indent=2)
