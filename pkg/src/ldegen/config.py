"""Experiment configuration: INI sections with typed, closed key sets.

Unknown sections or keys are rejected; a misspelt hyperparameter should
never silently fall back to its default.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .autoencoder import AeConfig, MaskSchedule
from .lde import LdeConfig

PRESETS = ("mnist", "toy", "tfd")


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    kind: str = "mnist"                 # mnist | image_folder | toy
    path: str = ""
    train_size: int = 0                 # 0 keeps every available training row
    validation_size: int = 10_000
    test_size: int = 10_000
    image_height: int = 28
    image_width: int = 28
    toy_samples: int = 50_000


@dataclass
class AutoencoderSection:
    hidden_widths: tuple = (512, 256)
    latent_dim: int = 8
    output_activation: str = "sigmoid"
    beta: float = 0.0


@dataclass
class ScheduleSection:
    incremental: bool = True
    initial_dim: int = 0                # 0 -> max(1, ceil(D / 8))
    ramp_fraction: float = 0.5


@dataclass
class LdeSection:
    mixtures: int = 30
    filter_size: int = 2
    sigma_floor: float = 1e-3
    standardize: bool = False


@dataclass
class OptimSection:
    ae_learning_rate: float = 1e-3
    lde_learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 128


@dataclass
class TrainSection:
    ae_steps: int = 5000
    lde_steps: int = 20000


@dataclass
class EvalSection:
    parzen_samples: int = 10_000
    parzen_validation: int = 1000
    bandwidth_min: float = 0.01
    bandwidth_max: float = 1.0
    bandwidth_points: int = 20
    interp_alphas: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    causality_trials: int = 100


@dataclass
class SeedSection:
    seed: int = 0
    data: int = -1                      # -1 -> derived from ``seed``
    init: int = -1
    shuffle: int = -1
    sample: int = -1


@dataclass
class OutputSection:
    dir: str = "runs/default"


_SECTIONS = {
    "data": DataSection, "autoencoder": AutoencoderSection, "schedule": ScheduleSection,
    "lde": LdeSection, "optim": OptimSection, "train": TrainSection, "eval": EvalSection,
    "seeds": SeedSection, "output": OutputSection,
}
_SEED_NAMES = ("data", "init", "shuffle", "sample")


def derive_seed(master: int, name: str) -> int:
    spawn = _SEED_NAMES.index(name) + 1
    return int(np.random.SeedSequence(master, spawn_key=(spawn,)).generate_state(1, np.uint64)[0])


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    lde: LdeSection = field(default_factory=LdeSection)
    optim: OptimSection = field(default_factory=OptimSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seeds: SeedSection = field(default_factory=SeedSection)
    output: OutputSection = field(default_factory=OutputSection)

    def seed(self, name: str) -> int:
        explicit = getattr(self.seeds, name)
        return explicit if explicit >= 0 else derive_seed(self.seeds.seed, name)

    def override_seed(self, master: int) -> None:
        """Replace the master seed and every named seed derived from it."""
        if master < 0 or master >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.seeds = SeedSection(seed=master)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.data.image_height, self.data.image_width)

    def ae_config(self, input_dim: int) -> AeConfig:
        a = self.autoencoder
        return AeConfig(input_dim, tuple(a.hidden_widths), a.latent_dim, a.output_activation, a.beta)

    def mask_schedule(self) -> MaskSchedule | None:
        d = self.autoencoder.latent_dim
        steps = self.train.ae_steps
        if not self.schedule.incremental:
            return None
        d0 = self.schedule.initial_dim or max(1, math.ceil(d / 8))
        return MaskSchedule.default(d, steps, self.schedule.ramp_fraction, initial_dim=d0)

    def lde_config(self, latent_dim: int) -> LdeConfig:
        return LdeConfig(latent_dim, self.lde.mixtures, self.lde.filter_size, self.lde.sigma_floor)

    def bandwidth_grid(self) -> tuple[float, ...]:
        e = self.eval
        return tuple(np.logspace(math.log10(e.bandwidth_min), math.log10(e.bandwidth_max), e.bandwidth_points))

    def validate(self) -> None:
        d = self.data
        if d.kind not in ("mnist", "image_folder", "toy"):
            raise ConfigError(f"data.kind must be mnist, image_folder or toy, got {d.kind!r}")
        if d.kind != "toy":
            if not d.path:
                raise ConfigError(f"data.path is required for {d.kind} data")
            if not Path(d.path).exists():
                raise ConfigError(f"data.path {d.path!r} does not exist")
        if self.autoencoder.output_activation not in ("tanh", "sigmoid"):
            raise ConfigError("autoencoder.output_activation must be tanh or sigmoid")
        if self.autoencoder.beta != 0:
            raise ConfigError("autoencoder.beta > 0 needs a feature-distance hook, which the CLI does not ship")
        if not 0 <= self.schedule.ramp_fraction <= 1:
            raise ConfigError("schedule.ramp_fraction must lie in [0, 1]")
        if self.schedule.initial_dim > self.autoencoder.latent_dim:
            raise ConfigError("schedule.initial_dim exceeds autoencoder.latent_dim")
        positive = [("optim", "ae_learning_rate"), ("optim", "lde_learning_rate"), ("optim", "batch_size"),
                    ("lde", "mixtures"), ("autoencoder", "latent_dim"), ("eval", "parzen_samples"),
                    ("eval", "bandwidth_min"), ("eval", "bandwidth_points")]
        for sec, key in positive:
            if not getattr(getattr(self, sec), key) > 0:
                raise ConfigError(f"{sec}.{key} must be positive")
        if self.lde.filter_size < 2:
            raise ConfigError("lde.filter_size must be >= 2")


def _parse_value(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        obj = getattr(cfg, section)
        known = {f.name: f for f in dataclasses.fields(obj)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            setattr(obj, key, _parse_value(raw, getattr(obj, key), f"{source} [{section}] {key}"))
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), str(path))


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        obj = getattr(cfg, name)
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if isinstance(val, tuple):
                val = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in val)
            elif isinstance(val, bool):
                val = str(val).lower()
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{f.name} = {val}")
        lines.append("")
    return "\n".join(lines)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return resources.files("ldegen").joinpath("presets", f"{name}.ini").read_text()
