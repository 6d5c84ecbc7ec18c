"""Experiment configuration: one JSON file drives every CLI command.

Sections mirror the pipeline: the data mixture, the denoiser to (pre)train or
build, the guidance net architecture, the guidance training run, sampling,
and evaluation. Unknown keys anywhere are rejected so typos fail loudly, and
a sha256 digest of the canonical JSON form is stamped into every output
artifact for provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .denoisers import (AnalyticDenoiser, CorruptedDenoiser, CorruptionSpec,
                        DenoiserTrainConfig, MogSpec, train_neural_denoiser)
from .guidance import GuidanceNet
from .objectives import TimePairSampler
from .rng import stream
from .sampler import SampleConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceArch:
    embed_hidden: int = 256
    embed_dim: int = 512
    trunk_hidden: int = 64
    trunk_layers: int = 6
    dropout: float = 0.3
    allow_negative: bool = True
    zero_init: bool = True
    logsnr_clip: float = 13.8


@dataclass(frozen=True)
class DenoiserConfig:
    kind: str = "analytic"  # analytic | corrupted | neural
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    train: DenoiserTrainConfig = field(default_factory=DenoiserTrainConfig)

    def __post_init__(self):
        if self.kind not in ("analytic", "corrupted", "neural"):
            raise ConfigError(f"unknown denoiser kind {self.kind!r}")


@dataclass(frozen=True)
class EvalConfig:
    beta: float = 1.0
    lam: float = 1.0
    omega_grid: tuple = (0.0, 0.5, 1.0, 2.0, 4.0)
    resamples: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    mog: MogSpec = field(default_factory=MogSpec.default_2d)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    guidance: GuidanceArch = field(default_factory=GuidanceArch)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override every seed in the config tree (the CLI --seed flag)."""
        return dataclasses.replace(
            self, seed=seed,
            denoiser=dataclasses.replace(
                self.denoiser,
                train=dataclasses.replace(self.denoiser.train, seed=seed)),
            train=dataclasses.replace(self.train, seed=seed))


_SIMPLE = (int, float, str, bool, type(None))


def _to_jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if dataclasses.is_dataclass(value):
        return {f.name: _to_jsonable(getattr(value, f.name))
                for f in dataclasses.fields(value)}
    if isinstance(value, _SIMPLE):
        return value
    raise ConfigError(f"cannot serialize config value of type {type(value).__name__}")


def config_to_dict(config: ExperimentConfig) -> dict:
    return _to_jsonable(config)


def config_digest(config: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


_NESTED = {
    "mog": MogSpec,
    "denoiser": DenoiserConfig,
    "corruption": CorruptionSpec,
    "train": None,  # resolved by parent
    "guidance": GuidanceArch,
    "sample": SampleConfig,
    "eval": EvalConfig,
    "time_sampler": TimePairSampler,
}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {path or 'config'}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        if isinstance(value, dict):
            if name == "train":
                target = DenoiserTrainConfig if "denoiser" in path else TrainConfig
            else:
                target = _NESTED.get(name)
            if target is None:
                raise ConfigError(f"{sub} does not accept an object")
            kwargs[name] = _build(target, value, sub)
        elif name == "omega_grid":
            kwargs[name] = tuple(float(v) for v in value)
        elif name in ("means", "variances", "weights"):
            kwargs[name] = np.array(value, dtype=float)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(config: ExperimentConfig, path):
    with open(path, "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_denoiser(config: ExperimentConfig, quiet: bool = True):
    """Construct (or train) the denoiser the config describes."""
    kind = config.denoiser.kind
    if kind == "analytic":
        return AnalyticDenoiser(config.mog)
    if kind == "corrupted":
        return CorruptedDenoiser(config.mog, config.denoiser.corruption)
    if not quiet:
        print(f"pretraining neural denoiser ({config.denoiser.train.iterations} iterations)")
    model, _ = train_neural_denoiser(config.mog, config.denoiser.train)
    return model


def build_guidance_net(config: ExperimentConfig) -> GuidanceNet:
    arch = config.guidance
    return GuidanceNet.create(
        config.mog.n_classes, stream(config.seed, "guidance/init"),
        embed_hidden=arch.embed_hidden, embed_dim=arch.embed_dim,
        trunk_hidden=arch.trunk_hidden, trunk_layers=arch.trunk_layers,
        dropout=arch.dropout, allow_negative=arch.allow_negative,
        logsnr_clip=arch.logsnr_clip, zero_init=arch.zero_init)
