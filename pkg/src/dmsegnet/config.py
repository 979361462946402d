"""Plain-text run configuration: one `section.key = value` per line.

Every key is declared in the schema below with its type and default;
unknown keys, malformed lines, and out-of-range values are hard errors.
`render` emits a canonical snapshot that `parse_text` reads back
identically, which is how checkpoints embed their configuration.
"""

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got "
                          f"{text!r}") from exc


def _parse_triple(text: str) -> tuple[int, int, int]:
    vals = _parse_int_list(text)
    if len(vals) != 3:
        raise ConfigError(f"expected three integers, got {text!r}")
    return vals


@dataclass
class TrainSection:
    lr0: float = 1e-4
    poly_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-5
    epochs: int = 1
    steps_per_epoch: int = 100
    batch_size: int = 1
    crop_size: tuple[int, int, int] = (32, 32, 32)
    seed: int = 0
    val_interval: int = 50
    stop_dice: float = 0.0  # early stop once train-set mean dice reaches it; 0 disables
    precision: str = "float32"  # float64 is the deterministic verification mode
    out_dir: str = "runs/default"

    def validate(self):
        if not self.lr0 > 0:
            raise ConfigError(f"train.lr0 must be > 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"train.momentum must be in [0, 1), got "
                              f"{self.momentum}")
        if not self.poly_power > 0:
            raise ConfigError(f"train.poly_power must be > 0, got "
                              f"{self.poly_power}")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be >= 0")
        for name in ("epochs", "steps_per_epoch", "batch_size",
                     "val_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        if any(c < 1 for c in self.crop_size):
            raise ConfigError(f"train.crop_size must be positive, got "
                              f"{self.crop_size}")
        if not 0 <= self.stop_dice <= 1:
            raise ConfigError("train.stop_dice must be in [0, 1]")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"train.precision must be float32 or float64, "
                              f"got {self.precision!r}")


@dataclass
class DataSection:
    manifest: str = ""  # empty: use generated phantoms instead
    root: str = ""  # base dir for relative manifest paths (default: manifest dir)
    normalize: str = "zscore"  # zscore | window(lo,hi) | none
    split: tuple[int, ...] = (70, 10, 20)  # percent train/val/test
    split_seed: int = 0
    phantom_count: int = 8
    phantom_val_count: int = 2
    phantom_size: int = 32
    phantom_classes: int = 3
    phantom_seed: int = 7
    phantom_noise_sigma: float = 0.1

    def validate(self):
        if self.normalize not in ("zscore", "none") \
                and not (self.normalize.startswith("window(")
                         and self.normalize.endswith(")")):
            raise ConfigError(f"data.normalize must be zscore, none or "
                              f"window(lo,hi), got {self.normalize!r}")
        if len(self.split) != 3 or any(s < 0 for s in self.split) \
                or sum(self.split) != 100:
            raise ConfigError(f"data.split must be three percentages "
                              f"summing to 100, got {self.split}")
        for name in ("phantom_count", "phantom_size", "phantom_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"data.{name} must be >= 1")
        if self.phantom_val_count < 0:
            raise ConfigError("data.phantom_val_count must be >= 0")
        if self.phantom_noise_sigma < 0:
            raise ConfigError("data.phantom_noise_sigma must be >= 0")


@dataclass
class ModelSection:
    in_channels: int = 1
    num_classes: int = 2
    base_channels: int = 24
    decoder_channels: int = 48
    blocks_per_stage: tuple[int, ...] = (1, 1, 1, 1)
    state_dim: int = 16
    expand: int = 2
    conv_width: int = 4
    dt_rank: int = 0  # 0: ceil(channels / 16)
    fusion: str = "sum"
    tied_gate_weights: bool = False
    single_spatial_conv: bool = False

    def validate(self):
        for name in ("in_channels", "num_classes", "base_channels",
                     "decoder_channels", "state_dim", "expand",
                     "conv_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("model.num_classes must be >= 2")
        if len(self.blocks_per_stage) != 4 \
                or any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError(f"model.blocks_per_stage must be four "
                              f"positive counts, got {self.blocks_per_stage}")
        if self.dt_rank < 0:
            raise ConfigError("model.dt_rank must be >= 0 (0 = automatic)")
        if self.fusion not in ("sum", "concat_gate"):
            raise ConfigError(f"model.fusion must be sum or concat_gate, "
                              f"got {self.fusion!r}")


@dataclass
class AblationSection:
    gsc: bool = True  # gated spatial conv in every encoder stage
    qss: bool = True  # all four scan directions (off: forward only)

    def validate(self):
        pass


@dataclass
class RunConfig:
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    def validate(self) -> "RunConfig":
        for section in (self.train, self.data, self.model, self.ablation):
            section.validate()
        return self

    @property
    def total_steps(self) -> int:
        return self.train.epochs * self.train.steps_per_epoch


_PARSERS = {
    int: lambda s: int(s),
    float: lambda s: float(s),
    str: lambda s: s,
    bool: _parse_bool,
    tuple[int, int, int]: _parse_triple,
    tuple[int, ...]: _parse_int_list,
}


def _section_fields(section) -> dict:
    return {f.name: f.type for f in fields(section)}


def parse_text(text: str) -> RunConfig:
    """Parse `section.key = value` lines; `#` starts a comment."""
    cfg = RunConfig()
    sections = {"train": cfg.train, "data": cfg.data, "model": cfg.model,
                "ablation": cfg.ablation}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = "
                              f"value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"line {lineno}: key must be section.name, "
                              f"got {key!r}")
        sec_name, field_name = key.split(".")
        section = sections.get(sec_name)
        if section is None:
            raise ConfigError(f"line {lineno}: unknown section "
                              f"{sec_name!r}; known: "
                              f"{sorted(sections)}")
        types = _section_fields(section)
        if field_name not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}; known "
                              f"{sec_name} keys: {sorted(types)}")
        parser = _PARSERS[types[field_name]]
        try:
            setattr(section, field_name, parser(value))
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: cannot parse "
                              f"{value!r}") from exc
    return cfg.validate()


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_text(p.read_text())


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render(cfg: RunConfig) -> str:
    """Canonical text form; parse_text(render(c)) reproduces c exactly."""
    lines = []
    for sec_name in ("train", "data", "model", "ablation"):
        section = getattr(cfg, sec_name)
        for f in fields(section):
            lines.append(f"{sec_name}.{f.name} = "
                         f"{_render_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"
