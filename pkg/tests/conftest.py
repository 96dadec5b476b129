import numpy as np
import pytest

from soundloom.codec import Codebook, TokenGrid, train_codebook
from soundloom.config import ChannelSpec, EngineConfig, _SHIPPED_PROMPTS
from soundloom.dsp import StftConfig
from soundloom.generator.model import GeneratorConfig, MaskedTokenModel
from soundloom.streamer import OutpaintPlan


def lean_engine_config(**overrides) -> EngineConfig:
    """Small-but-real engine geometry: 10 s / 5 s segments at 48 kHz on a 4x30 grid."""
    kwargs = dict(
        stft=StftConfig(sample_rate=48000, fft_size=2048, hop_size=1000,
                        mel_bins=64, fmax=24000.0),
        codebook_size=32,
        generator=GeneratorConfig(blocks=1, dim=32, heads=2, codebook_size=32,
                                  grid=(4, 30), decode_iters=4, cond_dim=64),
        plan=OutpaintPlan(segment_columns=30, overlap_columns=15),
        channels=[ChannelSpec(p, 1.5) for p in _SHIPPED_PROMPTS],
        vocoder_iterations=2,
        corpus=[{"family": "tone", "count": 4, "duration_s": 10.0},
                {"family": "noise", "count": 4, "duration_s": 10.0}],
        sink={"kind": "null"},
    )
    kwargs.update(overrides)
    return EngineConfig(**kwargs)


def random_codebook(k: int, dim: int = 256, seed: int = 0) -> Codebook:
    rng = np.random.default_rng(seed)
    return train_codebook(rng.standard_normal((max(4 * k, 64), dim)) * 0.3 + 1.0,
                          k, iters=3, seed=seed)


def random_grid(shape, k: int, seed: int = 0) -> TokenGrid:
    rng = np.random.default_rng(seed)
    return TokenGrid(rng.integers(0, k, size=shape).astype(np.int32),
                     np.zeros(shape, dtype=bool))


@pytest.fixture(scope="session")
def lean_cfg() -> EngineConfig:
    return lean_engine_config()


@pytest.fixture(scope="session")
def lean_codebook(lean_cfg) -> Codebook:
    return random_codebook(lean_cfg.codebook_size, seed=3)


@pytest.fixture(scope="session")
def lean_model(lean_cfg) -> MaskedTokenModel:
    return MaskedTokenModel(lean_cfg.generator)


@pytest.fixture(scope="session")
def toy_model() -> MaskedTokenModel:
    """The desk-scale default: 2 blocks, 128 dim, 4 heads over the 16x60 grid."""
    return MaskedTokenModel(GeneratorConfig())
