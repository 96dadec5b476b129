"""Engine configuration: one YAML file, strict schema, fail-fast validation.

Unknown keys are rejected outright; an installation meant to run
unattended for months should not silently ignore a typo. Shape
consistency (mel bins vs grid rows, token columns vs segment length) is
checked at load time, not at first use.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .codec import PATCH
from .dsp import StftConfig
from .errors import ConfigError
from .generator.model import GeneratorConfig
from .streamer import OutpaintPlan

CONFIG_VERSION = 1

SINK_KINDS = ("per_channel", "interleaved", "null", "device")


@dataclass
class ChannelSpec:
    prompt: str
    cfg_scale: float = 1.5

    def __post_init__(self):
        if not self.prompt:
            raise ConfigError("channel prompt must be a non-empty string")
        if self.cfg_scale < 0:
            raise ConfigError(f"cfg_scale must be >= 0, got {self.cfg_scale}")


@dataclass
class TrainingSpec:
    epochs: int = 8
    batch_size: int = 8
    lr: float = 1e-3
    cond_dropout: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("training epochs and batch_size must be >= 1")
        if not 0 <= self.cond_dropout < 1:
            raise ConfigError("cond_dropout must be in [0, 1)")


@dataclass
class EngineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    codebook_size: int = 256
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    plan: OutpaintPlan = field(default_factory=OutpaintPlan)
    channels: list = field(default_factory=list)
    audio_query_path: str | None = None
    master_seed: int = 0
    vocoder_iterations: int = 32
    sink: dict = field(default_factory=lambda: {"kind": "per_channel", "path": "out"})
    corpus: list = field(default_factory=list)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    codebook_path: str = "artifacts/codebook.npz"
    model_path: str = "artifacts/model.npz"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.stft.mel_bins % PATCH != 0:
            raise ConfigError(
                f"mel_bins {self.stft.mel_bins} must be divisible by {PATCH}"
            )
        expected_grid = (self.stft.mel_bins // PATCH, self.plan.segment_columns)
        if tuple(self.generator.grid) != expected_grid:
            raise ConfigError(
                f"generator grid {self.generator.grid} != (mel_bins/{PATCH}, "
                f"segment_columns) = {expected_grid}"
            )
        if self.generator.codebook_size != self.codebook_size:
            raise ConfigError("generator codebook_size != codec codebook_size")
        self.plan.validate_against(self.stft, tuple(self.generator.grid))
        if len(self.channels) != 8:
            raise ConfigError(f"exactly 8 channels required, got {len(self.channels)}")
        if self.vocoder_iterations < 1:
            raise ConfigError("vocoder_iterations must be >= 1")
        if self.sink.get("kind") not in SINK_KINDS:
            raise ConfigError(
                f"sink kind must be one of {SINK_KINDS}, got {self.sink.get('kind')!r}"
            )
        unknown = set(self.sink) - {"kind", "path", "format", "device"}
        if unknown:
            raise ConfigError(f"unknown sink keys {sorted(unknown)}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


_SHIPPED_PROMPTS = [
    "hollow harbor",
    "glass rain",
    "vanishing rooms",
    "tidelight",
    "slow collapse of distant bells",
    "breathing architecture",
    "salt and signal",
    "afterimage of a storm",
]


def default_config() -> EngineConfig:
    return EngineConfig(
        channels=[ChannelSpec(p, 1.5) for p in _SHIPPED_PROMPTS],
        corpus=[
            {"family": "tone", "count": 12, "duration_s": 10.0},
            {"family": "chirp", "count": 12, "duration_s": 10.0},
            {"family": "noise", "count": 12, "duration_s": 10.0},
            {"family": "impulse", "count": 12, "duration_s": 10.0},
        ],
    )


def _from_mapping(cls, raw: dict, context: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown {context} keys {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {context} section: {e}") from e


def load_config(path) -> EngineConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> EngineConfig:
    raw = dict(raw)
    version = raw.pop("version", None)
    if version != CONFIG_VERSION:
        raise ConfigError(
            f"config version {version!r} not supported (expected {CONFIG_VERSION})"
        )
    top_keys = {
        "stft", "codec", "generator", "plan", "channels", "audio_query_path",
        "master_seed", "vocoder_iterations", "sink", "corpus", "training",
        "paths", "workers",
    }
    unknown = set(raw) - top_keys
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")

    stft = _from_mapping(StftConfig, raw.get("stft", {}), "stft")

    codec_raw = dict(raw.get("codec", {}))
    unknown = set(codec_raw) - {"codebook_size", "patch"}
    if unknown:
        raise ConfigError(f"unknown codec keys {sorted(unknown)}")
    if codec_raw.get("patch", PATCH) != PATCH:
        raise ConfigError(f"patch size is fixed at {PATCH}")
    codebook_size = int(codec_raw.get("codebook_size", 256))

    plan = _from_mapping(OutpaintPlan, raw.get("plan", {}), "plan")

    gen_raw = dict(raw.get("generator", {}))
    gen_raw.setdefault("codebook_size", codebook_size)
    gen_raw["grid"] = (stft.mel_bins // PATCH, plan.segment_columns)
    generator = _from_mapping(GeneratorConfig, gen_raw, "generator")

    channels_raw = raw.get("channels", [])
    if not isinstance(channels_raw, list):
        raise ConfigError("channels must be a list")
    channels = [_from_mapping(ChannelSpec, c, "channel") for c in channels_raw]

    training = _from_mapping(TrainingSpec, raw.get("training", {}), "training")

    paths = dict(raw.get("paths", {}))
    unknown = set(paths) - {"codebook", "model"}
    if unknown:
        raise ConfigError(f"unknown paths keys {sorted(unknown)}")

    kwargs = dict(
        stft=stft,
        codebook_size=codebook_size,
        generator=generator,
        plan=plan,
        channels=channels,
        audio_query_path=raw.get("audio_query_path"),
        master_seed=int(raw.get("master_seed", 0)),
        vocoder_iterations=int(raw.get("vocoder_iterations", 32)),
        sink=dict(raw.get("sink", {"kind": "per_channel", "path": "out"})),
        corpus=list(raw.get("corpus", [])),
        training=training,
        workers=int(raw.get("workers", 1)),
    )
    if "codebook" in paths:
        kwargs["codebook_path"] = paths["codebook"]
    if "model" in paths:
        kwargs["model_path"] = paths["model"]
    return EngineConfig(**kwargs)


def config_to_dict(cfg: EngineConfig) -> dict:
    gen = dataclasses.asdict(cfg.generator)
    gen.pop("grid")  # derived from stft + plan
    gen.pop("codebook_size")
    return {
        "version": CONFIG_VERSION,
        "master_seed": cfg.master_seed,
        "stft": dataclasses.asdict(cfg.stft),
        "codec": {"codebook_size": cfg.codebook_size, "patch": PATCH},
        "generator": gen,
        "plan": dataclasses.asdict(cfg.plan),
        "channels": [dataclasses.asdict(c) for c in cfg.channels],
        "audio_query_path": cfg.audio_query_path,
        "vocoder_iterations": cfg.vocoder_iterations,
        "sink": dict(cfg.sink),
        "corpus": list(cfg.corpus),
        "training": dataclasses.asdict(cfg.training),
        "paths": {"codebook": cfg.codebook_path, "model": cfg.model_path},
        "workers": cfg.workers,
    }


def save_config(path, cfg: EngineConfig):
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
