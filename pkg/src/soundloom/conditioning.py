"""Semantic condition embeddings for text prompts and audio queries.

Stand-in featurizers with the same interface a contrastive text/audio
encoder would have: text goes through character n-gram hashing, audio
through mel-band statistics and a fixed seeded projection. Both are
deterministic across runs and platforms and live in one unit-norm vector
space, so either modality can condition the generator interchangeably.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .dsp import StftConfig, Waveform, log_compress, mel_filterbank, stft

COND_DIM = 64

_NGRAM_SIZES = (1, 2, 3)
_AUDIO_PROJECTION_SEED = 0x51C2A


@dataclass
class CondEmbedding:
    vector: np.ndarray
    modality: str  # "text" | "audio" | "null"

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1:
            raise ValueError(f"embedding must be 1-D, got shape {self.vector.shape}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("embedding contains non-finite values")
        if self.modality not in ("text", "audio", "null"):
            raise ValueError(f"unknown modality {self.modality!r}")

    @property
    def dim(self) -> int:
        return self.vector.size


def _hash_ngram(ngram: str) -> int:
    digest = hashlib.blake2b(ngram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def embed_text(prompt: str, dim: int = COND_DIM) -> CondEmbedding:
    """Character n-gram hashing embedder; unit norm, stable across platforms."""
    if not isinstance(prompt, str) or not prompt:
        raise ValueError("prompt must be a non-empty string")
    v = np.zeros(dim)
    text = f"^{prompt.lower()}$"
    for n in _NGRAM_SIZES:
        for i in range(len(text) - n + 1):
            h = _hash_ngram(text[i : i + n])
            sign = 1.0 if (h >> 63) & 1 else -1.0
            v[h % dim] += sign
    norm = np.linalg.norm(v)
    if norm == 0.0:  # all n-gram signs cancelled; fall back to a fixed direction
        v[_hash_ngram(text) % dim] = 1.0
        norm = 1.0
    return CondEmbedding(v / norm, "text")


def _audio_features(w: Waveform) -> np.ndarray:
    bands = 32
    cfg = StftConfig(
        sample_rate=w.sample_rate,
        fft_size=1024,
        hop_size=512,
        mel_bins=bands,
        fmin=0.0,
        fmax=w.sample_rate / 2.0,
    )
    mel = log_compress(mel_filterbank(cfg) @ np.abs(stft(w.samples, cfg)))
    flux = np.abs(np.diff(mel, axis=1)).mean() if mel.shape[1] > 1 else 0.0
    rms = float(np.sqrt(np.mean(w.samples**2)))
    # trailing 1.0 keeps the feature vector off the origin for silence
    return np.concatenate([mel.mean(axis=1), mel.std(axis=1), [flux, rms, 1.0]])


def embed_audio(w: Waveform, dim: int = COND_DIM) -> CondEmbedding:
    """Mel-statistics embedder through a fixed seeded random projection."""
    if w.duration < 1.0:
        raise ValueError(
            f"audio query must be at least 1 s, got {w.duration:.3f} s"
        )
    feats = _audio_features(w)
    rng = np.random.default_rng(_AUDIO_PROJECTION_SEED)
    projection = rng.standard_normal((feats.size, dim)) / np.sqrt(feats.size)
    v = feats @ projection
    return CondEmbedding(v / np.linalg.norm(v), "audio")


def null_embedding(model) -> CondEmbedding:
    """The learned unconditioned vector from a generator checkpoint."""
    if model is None:
        raise ValueError("no model loaded")
    return CondEmbedding(model.params["null_cond"].astype(np.float64).copy(), "null")
