"""Run configuration: nested dataclasses + YAML + dotted overrides.

Optimization and loss hyperparameters default to the reference operating
point (latent size 4 channels at 1/4 resolution, 1000-step linear schedule,
768/256-dim style/degradation prompts, loss weights 1/1/0.1/0.001, AdamW at
1e-5). Architecture widths and epoch counts default to a desk-scale profile
that trains on one CPU core; both live in the same schema so a run config
can scale any of them independently.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import yaml

from .errors import ConfigError


@dataclass
class DataConfig:
    side: int = 64
    per_kind: int = 8
    seed: int = 0
    kinds: tuple[str, ...] = (
        "noise",
        "low_light",
        "haze",
        "rain",
        "raindrop",
        "snow",
        "blur",
        "jpeg",
    )
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class EmbeddingConfig:
    dim: int = 128          # d_e: joint image/degradation embedding width
    image_side: int = 64
    trunk_channels: tuple[int, ...] = (16, 32, 64)
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    temperature: float = 0.15


@dataclass
class PromptConfig:
    style_dim: int = 768    # d_s
    deg_dim: int = 256      # d_d
    num_kinds: int = 8
    leaky_slope: float = 0.2


@dataclass
class VAEConfig:
    base_channels: int = 32
    z_channels: int = 4
    downs: int = 2          # spatial factor f = 2**downs
    kl_weight: float = 1e-6
    epochs: int = 60
    batch_size: int = 16
    lr: float = 2e-3
    target_psnr: float = 28.0


@dataclass
class UNetConfig:
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 2)
    num_res_blocks: int = 1
    time_dim: int = 64


@dataclass
class ScheduleConfig:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    sample_steps: int = 20


@dataclass
class ControlConfig:
    widths: tuple[int, ...] = (16, 32, 64)
    dmb_enabled: bool = True
    decoder_enabled: bool = True
    use_timestep: bool = True
    use_context: bool = True


@dataclass
class Stage1Config:
    lr: float = 1e-5
    batch_size: int = 16
    epochs: int = 100
    lambda_deg: float = 1.0
    lambda_rec: float = 1.0
    clip_norm: float = 1.0
    seed: int = 0
    freeze_unet: bool = False


@dataclass
class Stage2Config:
    lr: float = 1e-5
    batch_size: int = 4
    epochs: int = 25
    lambda_per: float = 0.1
    lambda_adv: float = 0.001
    clip_norm: float = 1.0
    seed: int = 0


@dataclass
class PathsConfig:
    workdir: str = "runs/default"


@dataclass
class Config:
    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    embeddings: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    prompts: PromptConfig = field(default_factory=PromptConfig)
    vae: VAEConfig = field(default_factory=VAEConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)


_SECTION_TYPES = {f.name: f.type for f in dataclasses.fields(Config)}


def _schema_for_value(value: Any) -> dict:
    if isinstance(value, bool):
        return {"type": "boolean"}
    if isinstance(value, int):
        return {"type": "integer"}
    if isinstance(value, float):
        return {"type": "number"}
    if isinstance(value, str):
        return {"type": "string"}
    if isinstance(value, tuple):
        return {"type": "array", "items": _schema_for_value(value[0])}
    raise TypeError(f"unsupported config field type: {type(value)!r}")


def config_schema() -> dict:
    """JSON schema derived from the dataclass defaults; extra keys rejected."""
    sections = {}
    defaults = Config()
    for sec in dataclasses.fields(Config):
        sec_default = getattr(defaults, sec.name)
        props = {
            f.name: _schema_for_value(getattr(sec_default, f.name))
            for f in dataclasses.fields(sec_default)
        }
        sections[sec.name] = {
            "type": "object",
            "properties": props,
            "additionalProperties": False,
        }
    return {
        "type": "object",
        "properties": sections,
        "additionalProperties": False,
    }


def to_dict(cfg: Config) -> dict:
    def conv(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: conv(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [conv(v) for v in obj]
        return obj

    return conv(cfg)


def from_dict(data: dict) -> Config:
    try:
        jsonschema.validate(data, config_schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc
    cfg = Config()
    for sec_name, sec_data in data.items():
        section = getattr(cfg, sec_name)
        for key, value in sec_data.items():
            current = getattr(section, key)
            if isinstance(current, tuple):
                value = tuple(value)
            elif isinstance(current, float) and isinstance(value, int):
                value = float(value)
            setattr(section, key, value)
    return cfg


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> Config:
    """Load YAML (or defaults when path is None) and apply dotted overrides."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        data = loaded
    for item in overrides or []:
        data = _apply_override(data, item)
    return from_dict(data)


def _apply_override(data: dict, item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    dotted, raw = item.split("=", 1)
    parts = dotted.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key must be section.key, got {dotted!r}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override value {raw!r} is not a YAML scalar: {exc}") from exc
    section, key = parts
    out = dict(data)
    out[section] = dict(out.get(section, {}))
    out[section][key] = value
    return out


def save_config(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(to_dict(cfg), sort_keys=True, default_flow_style=False),
        encoding="utf-8",
    )


def config_digest(cfg: Config) -> str:
    """Canonical JSON for checkpoint metadata and change detection."""
    return json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
