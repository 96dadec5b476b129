"""Synthetic training corpora: tones, chirps, filtered noise, impulse trains.

Stands in for a large private recording archive. Every file's family and
drawn parameters go into the manifest, and the whole corpus is a pure
function of (spec, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, lfilter

from .dsp import Waveform
from .errors import ConfigError

FAMILIES = ("tone", "chirp", "noise", "impulse")


@dataclass(frozen=True)
class CorpusFamily:
    family: str
    count: int
    duration_s: float = 10.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown corpus family {self.family!r}")
        if self.count < 1 or self.duration_s <= 0:
            raise ConfigError("corpus family needs count >= 1 and duration > 0")


def _tone(rng, n, rate):
    freq = float(rng.uniform(60.0, 8000.0))
    amp = float(rng.uniform(0.2, 0.8))
    t = np.arange(n) / rate
    partials = amp * np.sin(2 * np.pi * freq * t)
    partials += 0.3 * amp * np.sin(2 * np.pi * 2 * freq * t)
    return partials, {"freq_hz": freq, "amp": amp}


def _chirp(rng, n, rate):
    f0 = float(rng.uniform(60.0, 2000.0))
    f1 = float(rng.uniform(f0, 12000.0))
    amp = float(rng.uniform(0.2, 0.8))
    t = np.arange(n) / rate
    dur = n / rate
    phase = 2 * np.pi * (f0 * t + (f1 - f0) * t * t / (2 * dur))
    return amp * np.sin(phase), {"f0_hz": f0, "f1_hz": f1, "amp": amp}


def _noise(rng, n, rate):
    lo = float(rng.uniform(80.0, min(4000.0, rate / 2 * 0.5)))
    hi = float(rng.uniform(lo * 1.5, min(lo * 8, rate / 2 * 0.95)))
    amp = float(rng.uniform(0.1, 0.5))
    b, a = butter(4, [lo / (rate / 2), hi / (rate / 2)], btype="band")
    x = lfilter(b, a, rng.standard_normal(n))
    peak = np.abs(x).max()
    if peak > 0:
        x = x / peak * amp
    return x, {"band_lo_hz": lo, "band_hi_hz": hi, "amp": amp}


def _impulse(rng, n, rate):
    rate_hz = float(rng.uniform(2.0, 12.0))
    decay_s = float(rng.uniform(0.01, 0.08))
    amp = float(rng.uniform(0.3, 0.9))
    x = np.zeros(n)
    period = int(rate / rate_hz)
    x[::period] = amp
    k = np.exp(-np.arange(int(decay_s * rate * 5)) / (decay_s * rate))
    x = np.convolve(x, k)[:n]
    return x, {"rate_hz": rate_hz, "decay_s": decay_s, "amp": amp}


_GENERATORS = {"tone": _tone, "chirp": _chirp, "noise": _noise, "impulse": _impulse}


def synth_corpus(spec: list[CorpusFamily], seed: int, sample_rate: int = 48000):
    """Generate the corpus; returns (waveforms, manifest).

    The manifest records, per file, the family and the parameters that
    were drawn. Same (spec, seed) gives byte-identical audio.
    """
    rng = np.random.default_rng(seed)
    waves: list[Waveform] = []
    entries = []
    for fam in spec:
        n = int(round(fam.duration_s * sample_rate))
        for i in range(fam.count):
            samples, params = _GENERATORS[fam.family](rng, n, sample_rate)
            samples = np.clip(samples, -1.0, 1.0)
            waves.append(Waveform(samples, sample_rate))
            entries.append({
                "index": len(waves) - 1,
                "family": fam.family,
                "duration_s": fam.duration_s,
                "params": params,
            })
    manifest = {
        "seed": seed,
        "sample_rate": sample_rate,
        "total_seconds": sum(e["duration_s"] for e in entries),
        "files": entries,
    }
    return waves, manifest


def families_from_config(raw: list[dict]) -> list[CorpusFamily]:
    out = []
    for item in raw:
        unknown = set(item) - {"family", "count", "duration_s"}
        if unknown:
            raise ConfigError(f"unknown corpus keys {sorted(unknown)}")
        out.append(CorpusFamily(**item))
    return out


def write_manifest(path, manifest: dict):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
