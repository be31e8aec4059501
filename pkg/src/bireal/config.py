"""Run configuration: strict key=value sections with a canonical dump.

Unknown sections or keys are hard errors (no silent defaults for typos).
``dumps(parse(text))`` is canonical: parsing its own output reproduces the
same configuration exactly.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .network import (BlockSpec, NetworkSpec, SpecError, StemSpec, get_spec)
from .surrogates import SurrogateKind

SURROGATE_NAMES = {k.value: k for k in SurrogateKind}


@dataclass
class NetworkConfig:
    name: str = ""  # registry name; empty means inline definition below
    kind: str = "bireal_shallow"
    input: tuple[int, ...] = (1, 28, 28)
    classes: int = 10
    stem_channels: int = 16
    stem_kernel: int = 3
    stem_stride: int = 1
    stem_pool: tuple[int, ...] = ()  # kernel, stride, pad; empty = no pool
    channels: tuple[int, ...] = ()
    strides: tuple[int, ...] = ()
    mid_divisor: int = 4
    surrogate: str = "approx_sign2"
    weight_mode: str = "magnitude_aware"

    def to_spec(self) -> NetworkSpec:
        surrogate = SURROGATE_NAMES[self.surrogate]
        if self.name:
            base = get_spec(self.name)
            if (base.surrogate, base.weight_mode) != (surrogate, self.weight_mode):
                base = NetworkSpec(base.name, base.input_shape, base.num_classes,
                                   base.stem, base.blocks, surrogate,
                                   self.weight_mode)
            return base
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ConfigError("inline network needs matching channels/strides")
        if len(self.input) != 3:
            raise ConfigError("network input must be CxHxW")
        blocks = []
        prev = self.stem_channels
        for cout, stride in zip(self.channels, self.strides):
            mid = cout // self.mid_divisor if self.kind == "bireal_bottleneck" else None
            blocks.append(BlockSpec(self.kind, prev, cout, stride, mid))
            prev = cout
        stem_pool = tuple(self.stem_pool) if self.stem_pool else None
        spec = NetworkSpec("inline", tuple(self.input), self.classes,
                           StemSpec(self.input[0], self.stem_channels,
                                    self.stem_kernel, self.stem_stride, stem_pool),
                           tuple(blocks), surrogate, self.weight_mode)
        try:
            spec.validate()
        except SpecError as e:
            raise ConfigError(str(e)) from e
        return spec


@dataclass
class TrainSettings:
    seed: int = 0
    batch_size: int = 32
    epochs: int = 20
    lr: float = 0.01
    lr_decay_epochs: tuple[int, ...] = (10, 15)
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0  # binarized phases; must stay 0
    pretrain_epochs: tuple[int, ...] = (5, 5, 5)  # relu, leaky_clip, clip
    pretrain_lr: float = 0.01
    pretrain_weight_decay: float = 1e-4
    grad_through_scale: bool = True
    scale_kind: str = "mean_abs"
    two_step: str = "auto"  # auto | off
    bn_retrain: bool = True
    augment: str = "none"  # none | crop | crop_flip
    crop_pad: int = 2
    threads: int = 1
    train_limit: int = 0  # 0 = full split
    test_limit: int = 0


@dataclass
class DataConfig:
    format: str = "mnist_idx"  # mnist_idx | cifar10_bin
    dir: str = ""


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> None:
        t = self.train
        if t.weight_decay != 0.0:
            raise ConfigError("weight_decay must be 0 in binarized training phases")
        if t.lr <= 0 or t.pretrain_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if t.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (BatchNorm needs batches)")
        if t.epochs < 0 or any(e < 0 for e in t.pretrain_epochs):
            raise ConfigError("epoch counts must be non-negative")
        if len(t.pretrain_epochs) != 3:
            raise ConfigError("pretrain_epochs needs exactly relu,leaky_clip,clip")
        if tuple(sorted(t.lr_decay_epochs)) != t.lr_decay_epochs:
            raise ConfigError("lr_decay_epochs must be sorted")
        if t.scale_kind not in ("mean_abs", "l1_sum"):
            raise ConfigError(f"unknown scale_kind {t.scale_kind!r}")
        if t.two_step not in ("auto", "off"):
            raise ConfigError(f"unknown two_step mode {t.two_step!r}")
        if t.augment not in ("none", "crop", "crop_flip"):
            raise ConfigError(f"unknown augment mode {t.augment!r}")
        if self.network.surrogate not in SURROGATE_NAMES:
            raise ConfigError(f"unknown surrogate {self.network.surrogate!r}")
        if self.network.weight_mode not in ("plain", "magnitude_aware"):
            raise ConfigError(f"unknown weight_mode {self.network.weight_mode!r}")
        if self.data.format not in ("mnist_idx", "cifar10_bin"):
            raise ConfigError(f"unknown data format {self.data.format!r}")


_SECTIONS = {"network": NetworkConfig, "train": TrainSettings, "data": DataConfig}


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        raw = raw.replace("x", ",")
        if not raw:
            return ()
        return tuple(int(v) for v in raw.split(","))
    return raw


def _dump_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e
    cfg = RunConfig()
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        known = {f.name: f for f in fields(target)}
        for key, raw in cp.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            default = getattr(target, key)
            try:
                setattr(target, key, _parse_value(raw, default))
            except (ValueError, ConfigError) as e:
                raise ConfigError(f"bad value for {section}.{key}: {e}") from e
    cfg.validate()
    return cfg


def dumps(cfg: RunConfig) -> str:
    """Canonical text form: every key, fixed order."""
    out = io.StringIO()
    for section, cls in _SECTIONS.items():
        out.write(f"[{section}]\n")
        target = getattr(cfg, section)
        for f in fields(cls):
            out.write(f"{f.name} = {_dump_value(getattr(target, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def load(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
