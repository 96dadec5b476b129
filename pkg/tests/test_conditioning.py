import itertools

import numpy as np
import pytest

from soundloom.codec import TokenGrid
from soundloom.conditioning import CondEmbedding, embed_audio, embed_text, null_embedding
from soundloom.config import _SHIPPED_PROMPTS
from soundloom.dsp import Waveform, synthesize_tone
from soundloom.generator.model import GeneratorConfig, MaskedTokenModel, predict_masked


class TestEmbedText:
    def test_deterministic(self):
        a = embed_text("hollow harbor")
        b = embed_text("hollow harbor")
        assert np.array_equal(a.vector, b.vector)
        assert a.modality == "text"

    def test_unit_norm(self):
        for prompt in ("x", "glass rain", "a much longer prompt with spaces"):
            assert abs(np.linalg.norm(embed_text(prompt).vector) - 1.0) < 1e-6

    def test_shipped_prompts_pairwise_distinct(self):
        embs = {p: embed_text(p).vector for p in _SHIPPED_PROMPTS}
        for a, b in itertools.combinations(_SHIPPED_PROMPTS, 2):
            assert float(np.dot(embs[a], embs[b])) < 1.0 - 1e-6

    def test_empty_prompt_rejected(self):
        with pytest.raises(ValueError):
            embed_text("")

    def test_survives_serialization(self, tmp_path):
        v = embed_text("tidelight").vector
        np.save(tmp_path / "v.npy", v)
        assert np.array_equal(np.load(tmp_path / "v.npy"), v)


class TestEmbedAudio:
    def test_deterministic(self):
        w = synthesize_tone(440.0, 1.5, 48000)
        assert np.array_equal(embed_audio(w).vector, embed_audio(w).vector)

    def test_noise_vs_tone_separated(self):
        rng = np.random.default_rng(0)
        noise = Waveform(np.clip(rng.standard_normal(48000) * 0.3, -1, 1), 48000)
        tone = synthesize_tone(440.0, 1.0, 48000)
        sim = float(np.dot(embed_audio(noise).vector, embed_audio(tone).vector))
        assert sim < 0.99

    def test_silence_is_well_defined(self):
        emb = embed_audio(Waveform(np.zeros(48000), 48000))
        assert np.isfinite(emb.vector).all()
        assert abs(np.linalg.norm(emb.vector) - 1.0) < 1e-6

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            embed_audio(Waveform(np.zeros(1000), 48000))

    def test_unit_norm(self):
        emb = embed_audio(synthesize_tone(900.0, 1.2, 48000))
        assert abs(np.linalg.norm(emb.vector) - 1.0) < 1e-6


class TestNullEmbedding:
    def test_comes_from_model_and_is_stable(self):
        model = MaskedTokenModel(GeneratorConfig(blocks=1, dim=16, heads=2,
                                                 codebook_size=8, grid=(2, 2)))
        a = null_embedding(model)
        b = null_embedding(model)
        assert a.modality == "null"
        assert np.array_equal(a.vector, b.vector)
        assert np.array_equal(a.vector, model.params["null_cond"].astype(np.float64))

    def test_requires_model(self):
        with pytest.raises(ValueError):
            null_embedding(None)


class TestInterchangeability:
    def test_text_and_audio_share_the_conditioning_space(self):
        cfg = GeneratorConfig(blocks=1, dim=16, heads=2, codebook_size=8,
                              grid=(2, 2), cond_dim=64)
        model = MaskedTokenModel(cfg)
        grid = TokenGrid(np.zeros((2, 2), np.int32), np.ones((2, 2), bool))
        for emb in (embed_text("salt and signal"),
                    embed_audio(synthesize_tone(500.0, 1.0, 48000)),
                    null_embedding(model)):
            out = predict_masked(model, grid, cond=emb)
            assert out.values.shape == (4, 8)
            assert np.isfinite(out.values).all()

    def test_modality_validation(self):
        with pytest.raises(ValueError):
            CondEmbedding(np.ones(4), "video")
