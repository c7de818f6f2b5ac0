"""Run configuration: dataclass sections, named presets, JSON files and --set overrides."""

import copy
import dataclasses
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from data_pipeline import AugmentationConfig, PipelineConfig
from frf_shadow import ShadowConfig
from model_config import DEFAULT_PRESET, PRESETS
from training_harness import TrainConfig
from transformer_shm import ModelConfig

# Load .env file for local runs
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass


class ConfigError(ValueError):
    """Invalid or unknown configuration keys or values."""


def get_env_var(var_name: str, required: bool = True) -> Optional[str]:
    """Get environment variable with optional requirement check"""
    value = os.getenv(var_name)
    if required and value is None:
        raise ConfigError(f"Required environment variable {var_name} is not set")
    return value


def default_jobs() -> int:
    raw = get_env_var("FRF_SHM_JOBS", required=False)
    if raw:
        try:
            jobs = int(raw)
        except ValueError:
            raise ConfigError(f"FRF_SHM_JOBS must be an integer, got {raw!r}")
        if jobs < 1:
            raise ConfigError(f"FRF_SHM_JOBS must be >= 1, got {jobs}")
        return jobs
    return os.cpu_count() or 1


@dataclass
class CampaignConfig:
    seed: int = 0
    jobs: Optional[int] = None
    member_jobs: int = 1
    keep_checkpoints: bool = True
    subset_folds: int = 5
    m_list: List[int] = field(default_factory=lambda: [1, 2, 4, 8, 16, 28])
    planted_seeds: List[int] = field(default_factory=lambda: list(range(10)))

    def __post_init__(self):
        if self.jobs is not None and self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")
        if self.member_jobs < 1:
            raise ValueError(f"member_jobs must be >= 1, got {self.member_jobs}")
        if self.subset_folds < 2:
            raise ValueError(f"subset_folds must be >= 2, got {self.subset_folds}")

    @property
    def resolved_jobs(self) -> int:
        return self.jobs if self.jobs is not None else default_jobs()


SECTIONS = {
    "generator": ShadowConfig,
    "pipeline": PipelineConfig,
    "model": ModelConfig,
    "training": TrainConfig,
    "campaign": CampaignConfig,
}
NESTED = {("pipeline", "augmentation"): AugmentationConfig}
TOP_LEVEL = ("preset", "output_dir", "log_level")


@dataclass
class RunConfig:
    generator: ShadowConfig = field(default_factory=ShadowConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    preset: Optional[str] = DEFAULT_PRESET
    output_dir: str = "runs"
    log_level: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _field_names(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _build_section(name: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object, got {type(raw).__name__}")
    known = _field_names(cls)
    kwargs = {}
    for key, value in raw.items():
        dotted = f"{name}.{key}"
        if key not in known:
            raise ConfigError(f"unknown config key {dotted!r}")
        nested = NESTED.get((name, key))
        kwargs[key] = _build_section(dotted, nested, value) if nested else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {name} config: {e}") from e


def build_run_config(raw: Dict[str, Any]) -> RunConfig:
    for key in raw:
        if key not in SECTIONS and key not in TOP_LEVEL:
            raise ConfigError(f"unknown config key {key!r}")
    sections = {name: _build_section(name, cls, raw.get(name, {})) for name, cls in SECTIONS.items()}
    return RunConfig(
        preset=raw.get("preset", DEFAULT_PRESET),
        output_dir=raw.get("output_dir", "runs"),
        log_level=raw.get("log_level"),
        **sections,
    )


def parse_override(text: str) -> Tuple[str, Any]:
    """'section.key=value' -> (dotted key, value); values are JSON when they parse, else strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw_value = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} names no key")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    return key, value


def _apply_override(raw: Dict[str, Any], dotted: str, value: Any):
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"cannot override {dotted!r}: {part!r} is not a section")
        node = child
    node[parts[-1]] = value


def load_run_config(
    path: Optional[Path] = None,
    overrides: Sequence[str] = (),
    preset: Optional[str] = None,
) -> RunConfig:
    """Defaults < preset < file < overrides."""
    file_raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r") as f:
                file_raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(file_raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")

    parsed = [parse_override(o) for o in overrides]
    preset_name = preset or dict(parsed).get("preset") or file_raw.get("preset") or DEFAULT_PRESET
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}; expected one of {sorted(PRESETS)}")

    raw = _deep_merge(PRESETS[preset_name], file_raw)
    for dotted, value in parsed:
        _apply_override(raw, dotted, value)
    raw["preset"] = preset_name
    return build_run_config(raw)


def write_resolved_config(config: RunConfig, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "resolved_config.json"
    with open(path, "w") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
    return path
