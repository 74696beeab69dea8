"""Run configuration: dataclasses plus the plain `key = value` file format."""

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from llm_gateway.gateway import BackendConfig, BackendConfigError
from simulation.world_sim import SensorConfig

REPO_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG = REPO_ROOT / "configs" / "default.conf"
DEFAULT_FIXTURES = REPO_ROOT / "fixtures" / "golden"

RUN_KEYS = ("max_refinements", "wall_clock_cap", "action_delay", "task_knowledge_files")
SENSOR_KEYS = ("rotation_increment", "fov", "view_distance", "reach_distance")
BACKEND_KEYS = (
    "backend", "endpoint", "model", "api_key_env", "max_attempts",
    "backoff", "timeout", "temperature", "fixtures", "transcript",
)


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    max_refinements: int = 5
    wall_clock_cap: float = 300.0
    sensor: SensorConfig = field(default_factory=SensorConfig)
    backend: BackendConfig = field(default_factory=lambda: BackendConfig(fixture_path=DEFAULT_FIXTURES))
    action_delay: float = 0.0
    task_knowledge_files: Tuple[Path, ...] = ()

    def __post_init__(self):
        if self.max_refinements < 0:
            raise ConfigError("max_refinements cannot be negative")
        if self.wall_clock_cap <= 0:
            raise ConfigError("wall_clock_cap must be positive")
        if self.action_delay < 0:
            raise ConfigError("action_delay cannot be negative")
        self.task_knowledge_files = tuple(Path(p) for p in self.task_knowledge_files)


def parse_config_text(text: str) -> Dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse run configuration: {e}") from e
    values = dict(parser["run"])
    unknown = [key for key in values if key not in RUN_KEYS + SENSOR_KEYS + BACKEND_KEYS]
    if unknown:
        raise ConfigError(f"Unknown configuration key(s): {', '.join(unknown)}")
    return values


def _number(values: Dict[str, Any], key: str, kind, default):
    raw = values.get(key)
    if raw is None or raw == "":
        return default
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a {kind.__name__}, got {raw!r}")


def _path_list(raw) -> Tuple[Path, ...]:
    if not raw:
        return ()
    if isinstance(raw, (list, tuple)):
        return tuple(Path(p) for p in raw)
    return tuple(Path(p.strip()) for p in str(raw).split(",") if p.strip())


def _repo_path(raw) -> Optional[Path]:
    if not raw:
        return None
    path = Path(raw)
    if path.is_absolute() or path.exists():
        return path
    for base in (REPO_ROOT, REPO_ROOT / "fixtures"):
        if (base / path).exists():
            return base / path
    return path


def build_run_config(values: Dict[str, Any]) -> RunConfig:
    """Turn flat key/value pairs (from a file, flags or both) into a validated RunConfig."""
    defaults = RunConfig.__dataclass_fields__
    backoff = values.get("backoff")
    if isinstance(backoff, str):
        try:
            backoff = tuple(float(part) for part in backoff.split(",") if part.strip())
        except ValueError:
            raise ConfigError(f"backoff must be comma-separated seconds, got {values['backoff']!r}")
    mode = values.get("backend") or "scripted"
    fixtures = _repo_path(values.get("fixtures")) or (DEFAULT_FIXTURES if mode == "scripted" else None)

    try:
        sensor = SensorConfig(
            rotation_increment=_number(values, "rotation_increment", int, 90),
            fov=_number(values, "fov", int, 90),
            view_distance=_number(values, "view_distance", int, 8),
            reach_distance=_number(values, "reach_distance", int, 1),
        )
        backend = BackendConfig(
            mode=mode,
            endpoint=values.get("endpoint") or None,
            model_name=values.get("model") or "gpt-4o",
            api_key_env=values.get("api_key_env") or "OPENAI_API_KEY",
            max_attempts=_number(values, "max_attempts", int, 3),
            backoff=backoff if backoff is not None else (1.0, 2.0, 4.0),
            timeout=_number(values, "timeout", float, 60.0),
            temperature=_number(values, "temperature", float, 0.0),
            fixture_path=fixtures,
            transcript_path=values.get("transcript") or None,
        )
    except (ValueError, BackendConfigError) as e:
        raise ConfigError(str(e)) from e

    return RunConfig(
        max_refinements=_number(values, "max_refinements", int, defaults["max_refinements"].default),
        wall_clock_cap=_number(values, "wall_clock_cap", float, defaults["wall_clock_cap"].default),
        sensor=sensor,
        backend=backend,
        action_delay=_number(values, "action_delay", float, 0.0),
        task_knowledge_files=_path_list(values.get("task_knowledge_files")),
    )


def load_run_config(path: Optional[Union[str, Path]] = None, **overrides) -> RunConfig:
    """File values first, then every override that is not None."""
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Configuration file not found: {path}")
        values.update(parse_config_text(path.read_text(encoding="utf-8")))
    values.update({key: value for key, value in overrides.items() if value is not None})
    return build_run_config(values)
