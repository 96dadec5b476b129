"""Waveform <-> log-mel spectrogram conversion and phaseless vocoding.

The analysis chain is a centered STFT (reflect padding, ``frames =
ceil(len / hop)``), a triangular mel filterbank with unit-sum rows, and
``log1p`` magnitude compression. The synthesis chain inverts the
filterbank with a cached pseudoinverse and runs Griffin-Lim phase
recovery. Everything here is a pure function of its arguments; there is
no shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.signal import get_window, resample_poly

from .errors import ConfigError

# Value the compression law assigns to zero magnitude. Silence mels and
# frame padding are filled with it.
MEL_FLOOR = 0.0

# Gain applied to linear mel magnitudes before log1p.
COMPRESSION_GAIN = 1.0


@dataclass(frozen=True)
class StftConfig:
    """Analysis geometry for the mel front end."""

    sample_rate: int = 48000
    fft_size: int = 2048
    hop_size: int = 500
    window: str = "hann"
    mel_bins: int = 256
    fmin: float = 0.0
    fmax: float = 24000.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.hop_size <= 0 or self.fft_size <= 0:
            raise ConfigError("fft_size and hop_size must be positive")
        if self.hop_size > self.fft_size:
            raise ConfigError(
                f"hop_size {self.hop_size} exceeds fft_size {self.fft_size}"
            )
        if self.mel_bins < 1:
            raise ConfigError(f"mel_bins must be >= 1, got {self.mel_bins}")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ConfigError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got "
                f"fmin={self.fmin} fmax={self.fmax} rate={self.sample_rate}"
            )

    def frames_for(self, num_samples: int) -> int:
        return -(-num_samples // self.hop_size)


@dataclass
class Waveform:
    """Mono audio in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    """Log-compressed mel magnitudes, shape (mel_bins, frames)."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"mel data must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] != self.config.mel_bins:
            raise ValueError(
                f"mel has {self.data.shape[0]} bins, config says {self.config.mel_bins}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("mel contains non-finite entries")

    @property
    def frames(self) -> int:
        return self.data.shape[1]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: StftConfig) -> np.ndarray:
    """Triangular filterbank, shape (mel_bins, fft_size//2 + 1).

    Every row is normalized to unit sum. A triangle too narrow to catch
    any FFT bin center degenerates to a single weight on the nearest bin
    so the unit-sum invariant holds for all rows.
    """
    n_freqs = cfg.fft_size // 2 + 1
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_freqs)
    edges = _mel_to_hz(
        np.linspace(_hz_to_mel(cfg.fmin), _hz_to_mel(cfg.fmax), cfg.mel_bins + 2)
    )
    fb = np.zeros((cfg.mel_bins, n_freqs))
    for i in range(cfg.mel_bins):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(center - lo, 1e-12)
        down = (hi - freqs) / max(hi - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
        if fb[i].sum() <= 0.0:
            fb[i, np.argmin(np.abs(freqs - center))] = 1.0
        fb[i] /= fb[i].sum()
    return fb


def mel_center_frequencies(cfg: StftConfig) -> np.ndarray:
    """Center frequency in Hz of each mel band (independent of the filterbank matrix)."""
    edges = np.linspace(_hz_to_mel(cfg.fmin), _hz_to_mel(cfg.fmax), cfg.mel_bins + 2)
    return _mel_to_hz(edges[1:-1])


@lru_cache(maxsize=8)
def _window(cfg: StftConfig) -> np.ndarray:
    return get_window(cfg.window, cfg.fft_size, fftbins=True).astype(np.float64)


def _frame(padded: np.ndarray, n_frames: int, cfg: StftConfig) -> np.ndarray:
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop_size * np.arange(n_frames)[:, None]
    return padded[idx]


def stft(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Centered complex STFT, shape (fft_size//2 + 1, ceil(len/hop))."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < cfg.fft_size:
        raise ValueError(
            f"signal of {x.size} samples is shorter than one analysis frame "
            f"({cfg.fft_size} samples)"
        )
    pad = cfg.fft_size // 2
    n_frames = cfg.frames_for(x.size)
    padded = np.pad(x, pad, mode="reflect")
    frames = _frame(padded, n_frames, cfg) * _window(cfg)[None, :]
    return np.fft.rfft(frames, axis=1).T


def istft(spec: np.ndarray, cfg: StftConfig, length: int | None = None) -> np.ndarray:
    """Overlap-add inverse of :func:`stft`. Returns frames*hop samples unless trimmed."""
    frames = np.fft.irfft(spec.T, n=cfg.fft_size, axis=1)
    n_frames = frames.shape[0]
    win = _window(cfg)
    frames = frames * win[None, :]
    total = (n_frames - 1) * cfg.hop_size + cfg.fft_size
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = win * win
    for k in range(n_frames):
        start = k * cfg.hop_size
        out[start : start + cfg.fft_size] += frames[k]
        norm[start : start + cfg.fft_size] += wsq
    out /= np.maximum(norm, 1e-10)
    pad = cfg.fft_size // 2
    target = n_frames * cfg.hop_size if length is None else length
    out = out[pad : pad + target]
    if out.size < target:
        out = np.pad(out, (0, target - out.size))
    return out


def log_compress(mag: np.ndarray) -> np.ndarray:
    return np.log1p(COMPRESSION_GAIN * np.maximum(mag, 0.0))


def log_expand(data: np.ndarray) -> np.ndarray:
    return np.expm1(np.maximum(data, MEL_FLOOR)) / COMPRESSION_GAIN


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Rational-ratio resampling; identity rate returns the samples untouched."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if len(w) == 0:
        raise ValueError("cannot resample an empty signal")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = Fraction(target_rate, w.sample_rate)
    out = resample_poly(w.samples, ratio.numerator, ratio.denominator)
    out = np.clip(out, -1.0, 1.0)
    return Waveform(out, target_rate)


def wav_to_mel(w: Waveform, cfg: StftConfig) -> MelSpectrogram:
    """Analysis front end: magnitude STFT -> mel filterbank -> log compression."""
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"waveform rate {w.sample_rate} does not match config rate {cfg.sample_rate}"
        )
    mag = np.abs(stft(w.samples, cfg))
    mel = mel_filterbank(cfg) @ mag
    return MelSpectrogram(log_compress(mel), cfg)


@lru_cache(maxsize=8)
def _filterbank_pinv(cfg: StftConfig) -> np.ndarray:
    return np.linalg.pinv(mel_filterbank(cfg))


def griffin_lim(
    magnitude: np.ndarray, cfg: StftConfig, iterations: int = 32, seed: int = 0
) -> np.ndarray:
    """Phase recovery from a linear magnitude spectrogram (bins x frames).

    Random uniform phase init from `seed`; the reconstruction error
    ||stft(x)| - magnitude|| is non-increasing over iterations.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    rng = np.random.default_rng(seed)
    phase = rng.uniform(-np.pi, np.pi, size=magnitude.shape)
    spec = magnitude * np.exp(1j * phase)
    x = istft(spec, cfg)
    for _ in range(iterations - 1):
        rebuilt = stft(x, cfg)
        rebuilt = rebuilt[:, : magnitude.shape[1]]
        phase = np.angle(rebuilt)
        x = istft(magnitude * np.exp(1j * phase), cfg)
    return x


def mel_to_wav(m: MelSpectrogram, iterations: int = 32, seed: int = 0) -> Waveform:
    """Phaseless vocoder: pseudoinverse mel inversion + Griffin-Lim.

    Output length is exactly frames * hop. Deterministic for a fixed seed.
    Peaks above full scale are normalized down; quieter signals are left alone.
    """
    cfg = m.config
    linear = _filterbank_pinv(cfg) @ log_expand(m.data)
    np.maximum(linear, 0.0, out=linear)
    x = griffin_lim(linear, cfg, iterations=iterations, seed=seed)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return Waveform(x, cfg.sample_rate)


def spectral_convergence(magnitude: np.ndarray, samples: np.ndarray, cfg: StftConfig) -> float:
    """||  |stft(x)| - target ||_F / ||target||_F, the Griffin-Lim objective."""
    mag = np.abs(stft(samples, cfg))[:, : magnitude.shape[1]]
    denom = np.linalg.norm(magnitude)
    if denom == 0.0:
        return float(np.linalg.norm(mag))
    return float(np.linalg.norm(mag - magnitude) / denom)


def synthesize_tone(freq: float, duration: float, sample_rate: int, amplitude: float = 0.5,
                    phase: float = 0.0) -> Waveform:
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq * t + phase), sample_rate)


def dominant_frequency(w: Waveform) -> float:
    """Frequency of the largest rFFT bin; oracle helper for resampling tests."""
    if len(w) == 0:
        raise ValueError("empty signal")
    spectrum = np.abs(np.fft.rfft(w.samples))
    return float(np.argmax(spectrum) * w.sample_rate / len(w))


def mel_bin_for_frequency(cfg: StftConfig, freq: float) -> int:
    """Index of the mel band whose center frequency is nearest to `freq`."""
    centers = mel_center_frequencies(cfg)
    return int(np.argmin(np.abs(centers - freq)))
