"""
Configuration management for road-adapters.

``Settings`` holds user-level defaults (JSON file plus environment);
``RunConfig`` holds a per-run YAML document scoped by subcommand.
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import (
    Any,
    Dict,
    List,
    Optional,
    Type,
    Union,
    get_args,
    get_origin,
    get_type_hints,
)

import yaml
from dotenv import load_dotenv

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_SETTINGS_PATH = Path.home() / ".road-adapters"
DEFAULT_SETTINGS = {
    "output_dir": "road-output",
    "log_level": "WARNING",
    "default_seed": 0,
    "bench_precision": "float32",
}


class Settings:
    """User-level defaults for road-adapters."""

    def __init__(self, settings_path: Optional[Path] = None) -> None:
        """
        Initialize settings.

        Args:
            settings_path: Path to settings file (defaults to ~/.road-adapters)
        """
        self.settings_path = settings_path or DEFAULT_SETTINGS_PATH
        self._settings: Dict[str, Any] = DEFAULT_SETTINGS.copy()
        self.load()

    def load(self) -> None:
        """Load settings from file, then apply environment overrides."""
        if self.settings_path.exists():
            try:
                with open(self.settings_path, "r") as f:
                    file_settings = json.load(f)
                if not isinstance(file_settings, dict):
                    raise ValueError("top level is not an object")
                self._settings.update(file_settings)
                logger.debug(f"Loaded settings from {self.settings_path}")
            except (json.JSONDecodeError, ValueError, IOError) as e:
                logger.warning(
                    f"Failed to load settings from {self.settings_path}: {e}"
                )

        self._load_from_env()

    def _load_from_env(self) -> None:
        env_mapping = {
            "ROAD_ADAPTERS_OUTPUT_DIR": "output_dir",
            "ROAD_ADAPTERS_LOG_LEVEL": "log_level",
            "ROAD_ADAPTERS_SEED": "default_seed",
            "ROAD_ADAPTERS_BENCH_PRECISION": "bench_precision",
        }

        for env_var, key in env_mapping.items():
            value = os.getenv(env_var)
            if value is None:
                continue
            if key == "default_seed":
                try:
                    value = int(value)
                except ValueError:
                    logger.warning(f"Invalid seed value: {value}")
                    continue
            elif key == "bench_precision" and value not in ("float32", "float64"):
                logger.warning(f"Invalid bench precision: {value}")
                continue
            self._settings[key] = value

    def save(self) -> None:
        try:
            self.settings_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.settings_path, "w") as f:
                json.dump(self._settings, f, indent=2)
            logger.debug(f"Saved settings to {self.settings_path}")
        except IOError as e:
            logger.error(f"Failed to save settings to {self.settings_path}: {e}")

    def get(self, key: str, default: Any = None) -> Any:
        return self._settings.get(key, default)

    def set(self, key: str, value: Any) -> None:
        self._settings[key] = value

    def to_dict(self) -> Dict[str, Any]:
        return self._settings.copy()

    @property
    def output_dir(self) -> Path:
        return Path(self.get("output_dir", "road-output"))

    @property
    def log_level(self) -> str:
        return str(self.get("log_level", "WARNING")).upper()

    @property
    def default_seed(self) -> int:
        return int(self.get("default_seed", 0))

    @property
    def bench_precision(self) -> str:
        return str(self.get("bench_precision", "float32"))


_settings_instance: Optional[Settings] = None


def get_settings() -> Settings:
    """
    Get the process-wide settings, reading ``.env`` on first use.

    Returns:
        Settings instance
    """
    global _settings_instance
    if _settings_instance is None:
        load_dotenv()
        _settings_instance = Settings()
    return _settings_instance


def reset_settings() -> None:
    global _settings_instance
    _settings_instance = None


@dataclass
class VerifySection:
    seed: Optional[int] = None
    cases: int = 100
    training: bool = True
    output: Optional[str] = None


@dataclass
class GradcheckSection:
    seed: Optional[int] = None
    kinds: List[str] = field(
        default_factory=lambda: ["road1", "road2", "road4", "lora", "cayley", "diag"]
    )
    sizes: List[int] = field(default_factory=lambda: [8])
    cases: int = 1
    threshold: float = 1e-4
    output: Optional[str] = None


@dataclass
class TrainSection:
    seed: Optional[int] = None
    d2: int = 32
    variant: str = "road1"
    samples: int = 2000
    epochs: int = 300
    lr: float = 0.01
    batch_size: int = 100
    optimizer: str = "adam"
    baseline: bool = True
    output: Optional[str] = None


@dataclass
class BenchSection:
    seed: Optional[int] = None
    kernels: List[str] = field(
        default_factory=lambda: [
            "lora_bmm",
            "lora_merged_homogeneous",
            "road_elementwise",
            "diag_elementwise",
        ]
    )
    batch_sizes: List[int] = field(default_factory=lambda: [8])
    token_counts: List[int] = field(default_factory=lambda: [2048])
    ranks: List[int] = field(default_factory=lambda: [8])
    d1: int = 1024
    d2: int = 1024
    mode: str = "decode"
    precision: Optional[str] = None
    repetitions: int = 5
    warmup: int = 1
    threads: int = 1
    output: Optional[str] = None


@dataclass
class ComposeSection:
    inputs: List[str] = field(default_factory=list)
    masks: List[str] = field(default_factory=list)
    output: Optional[str] = None


@dataclass
class AnalyzeSection:
    pairs: Optional[str] = None
    output: Optional[str] = None


SECTIONS: Dict[str, Type[Any]] = {
    "verify": VerifySection,
    "gradcheck": GradcheckSection,
    "train-toy": TrainSection,
    "bench": BenchSection,
    "compose": ComposeSection,
    "analyze": AnalyzeSection,
}


def _check_type(where: str, value: Any, hint: Any) -> Any:
    origin = get_origin(hint)
    if origin is Union:
        args = [a for a in get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _check_type(where, value, args[0])
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {type(value).__name__}")
        (item,) = get_args(hint)
        return [_check_type(f"{where}[{i}]", v, item) for i, v in enumerate(value)]
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint is int and isinstance(value, bool):
        raise ConfigError(f"{where} must be an integer, got a boolean")
    if not isinstance(value, hint):
        raise ConfigError(
            f"{where} must be {hint.__name__}, got {type(value).__name__}"
        )
    return value


def build_section(command: str, values: Optional[Dict[str, Any]]) -> Any:
    """
    Validate one command's section and fill in defaults.

    Raises:
        ConfigError: On unknown commands, unknown keys or wrong value types
    """
    if command not in SECTIONS:
        raise ConfigError(
            f"Unknown config section {command!r}; expected one of {sorted(SECTIONS)}"
        )
    cls = SECTIONS[command]
    values = values or {}
    if not isinstance(values, dict):
        raise ConfigError(f"Section {command!r} must be a mapping")
    hints = get_type_hints(cls)
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"Unknown keys in {command!r}: {', '.join(unknown)}")
    checked = {
        key: _check_type(f"{command}.{key}", value, hints[key])
        for key, value in values.items()
    }
    return cls(**checked)


@dataclass
class RunConfig:
    """Run document: one optional section per subcommand."""

    sections: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, document: Any) -> "RunConfig":
        if document is None:
            return cls()
        if not isinstance(document, dict):
            raise ConfigError("Run config must be a mapping of subcommand sections")
        return cls(
            {
                command: build_section(command, values)
                for command, values in document.items()
            }
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        """
        Read a YAML (or JSON) run config.

        Raises:
            ConfigError: If the file is unreadable, not YAML, or fails validation
        """
        path = Path(path)
        try:
            document = yaml.safe_load(path.read_text())
        except OSError as e:
            raise ConfigError(f"Cannot read run config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"Run config {path} is not valid YAML: {e}") from e
        logger.debug(f"Loaded run config from {path}")
        return cls.from_dict(document)

    def section(self, command: str) -> Any:
        """The validated section for ``command``, defaults if absent."""
        if command in self.sections:
            return self.sections[command]
        return build_section(command, {})
