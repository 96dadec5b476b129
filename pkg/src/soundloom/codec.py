"""Patch tokenizer for log-mel spectrograms.

Non-overlapping 16x16 time-mel patches are flattened to 256-vectors and
quantized against a k-means codebook. Encoding assigns each patch to its
nearest codeword (squared Euclidean, lowest index wins ties); decoding
tiles codewords back into a mel. Quantization is a projection, so
encode(decode(grid)) == grid for any codebook.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .dsp import MEL_FLOOR, MelSpectrogram, StftConfig
from .errors import CheckpointError, ConfigError

PATCH = 16
CODEBOOK_FORMAT_VERSION = 1

# Patch rows per distance chunk; bounds peak memory of the (chunk, K, D) buffer.
_CHUNK = 128


@dataclass
class TokenGrid:
    """Codeword indices on the (freq patches, time patches) grid plus mask flags."""

    indices: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int32)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.indices.shape != self.mask.shape or self.indices.ndim != 2:
            raise ValueError(
                f"indices {self.indices.shape} and mask {self.mask.shape} must be "
                "matching 2-D grids"
            )

    @classmethod
    def fully_masked(cls, shape: tuple[int, int]) -> "TokenGrid":
        return cls(np.zeros(shape, dtype=np.int32), np.ones(shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.indices.shape

    @property
    def num_masked(self) -> int:
        return int(self.mask.sum())

    @property
    def fully_unmasked(self) -> bool:
        return not self.mask.any()

    def copy(self) -> "TokenGrid":
        return TokenGrid(self.indices.copy(), self.mask.copy())

    def sha256(self) -> str:
        h = hashlib.sha256(self.indices.tobytes())
        h.update(self.mask.tobytes())
        return h.hexdigest()


@dataclass
class Codebook:
    """K x D table of patch codewords (D = PATCH*PATCH)."""

    entries: np.ndarray
    version: str = "v1"
    seed: int = 0
    inertia: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise ValueError(f"codebook entries must be K x D, got {self.entries.shape}")
        if self.entries.shape[0] < 1:
            raise ValueError("codebook needs at least one codeword")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("codebook contains non-finite entries")
        if np.unique(self.entries, axis=0).shape[0] != self.entries.shape[0]:
            raise ValueError("codebook contains duplicate codewords")

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def sha256(self) -> str:
        h = hashlib.sha256(f"{self.version}:{self.size}:{self.dim}".encode())
        h.update(self.entries.tobytes())
        return h.hexdigest()


def patchify(m: MelSpectrogram) -> tuple[np.ndarray, tuple[int, int]]:
    """Split a mel into flattened 16x16 patches.

    Returns (patches, (F, T)): patches are ordered row-major over the
    grid, patch n = (f, t) with n = f*T + t. The frame axis is padded up
    to a multiple of 16 with MEL_FLOOR; the bin axis must divide evenly.
    """
    bins, frames = m.data.shape
    if bins % PATCH != 0:
        raise ConfigError(f"mel_bins {bins} is not divisible by patch size {PATCH}")
    padded_frames = -(-frames // PATCH) * PATCH
    data = m.data
    if padded_frames != frames:
        data = np.pad(data, ((0, 0), (0, padded_frames - frames)),
                      constant_values=MEL_FLOOR)
    F, T = bins // PATCH, padded_frames // PATCH
    patches = (
        data.reshape(F, PATCH, T, PATCH)
        .transpose(0, 2, 1, 3)
        .reshape(F * T, PATCH * PATCH)
    )
    return patches, (F, T)


def unpatchify(patches: np.ndarray, grid_shape: tuple[int, int],
               frames: int | None = None) -> np.ndarray:
    """Inverse of :func:`patchify`; optionally trims frame padding back to `frames`."""
    F, T = grid_shape
    data = (
        np.asarray(patches, dtype=np.float64)
        .reshape(F, T, PATCH, PATCH)
        .transpose(0, 2, 1, 3)
        .reshape(F * PATCH, T * PATCH)
    )
    if frames is not None:
        data = data[:, :frames]
    return data


def _sq_distances(patches: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances (N, K), computed from direct differences.

    Deliberately not the |x|^2 - 2xc + |c|^2 expansion: direct differences
    make nearest-neighbor assignments reproduce a brute-force scan bit for bit.
    """
    diff = patches[:, None, :] - entries[None, :, :]
    # (diff**2).sum over the contiguous last axis uses the same pairwise
    # summation as np.sum on a 1-D slice, so a per-pair scan reproduces it.
    return (diff * diff).sum(axis=-1)


def _assign(patches: np.ndarray, entries: np.ndarray) -> tuple[np.ndarray, float]:
    """Nearest codeword per patch (ties -> lowest index) and total inertia."""
    n = patches.shape[0]
    labels = np.empty(n, dtype=np.int32)
    inertia = 0.0
    for start in range(0, n, _CHUNK):
        d = _sq_distances(patches[start : start + _CHUNK], entries)
        idx = np.argmin(d, axis=1)  # argmin returns the first (lowest) index on ties
        labels[start : start + _CHUNK] = idx
        inertia += float(d[np.arange(d.shape[0]), idx].sum())
    return labels, inertia


def _assign_fast(patches: np.ndarray, entries: np.ndarray) -> tuple[np.ndarray, float]:
    """GEMM-based assignment for training loops over large patch sets.

    Uses the |x|^2 - 2xc + |c|^2 expansion; distances agree with _assign
    only to rounding, which k-means tolerates but encode must not.
    """
    x2 = (patches * patches).sum(axis=1)
    c2 = (entries * entries).sum(axis=1)
    d = x2[:, None] - 2.0 * (patches @ entries.T) + c2[None, :]
    idx = np.argmin(d, axis=1)
    inertia = float(np.maximum(d[np.arange(d.shape[0]), idx], 0.0).sum())
    return idx.astype(np.int32), inertia


def train_codebook(patches: np.ndarray, k: int, iters: int = 25, seed: int = 0) -> Codebook:
    """Lloyd k-means over patch vectors; deterministic for a fixed seed.

    Initial centroids are k distinct patches drawn without replacement.
    Empty clusters are reseeded with the point farthest from its current
    centroid. Total quantization error is recorded per iteration and is
    non-increasing.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2:
        raise ValueError(f"patches must be N x D, got {patches.shape}")
    distinct = np.unique(patches, axis=0)
    if distinct.shape[0] < k:
        raise ValueError(
            f"need at least {k} distinct patches to train K={k}, got {distinct.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    entries = distinct[rng.choice(distinct.shape[0], size=k, replace=False)].copy()

    trace = []
    labels, inertia = _assign_fast(patches, entries)
    for _ in range(iters):
        trace.append(inertia)
        new_entries = entries.copy()
        for j in range(k):
            members = patches[labels == j]
            if members.shape[0] == 0:
                dists = ((patches - entries[labels]) ** 2).sum(axis=1)
                new_entries[j] = patches[int(np.argmax(dists))]
            else:
                new_entries[j] = members.mean(axis=0)
        new_labels, new_inertia = _assign_fast(patches, new_entries)
        if new_inertia > inertia:  # update did not help; keep the previous centroids
            break
        entries, labels, inertia = new_entries, new_labels, new_inertia
        if len(trace) >= 2 and trace[-1] == inertia:
            break
    trace.append(inertia)

    # k-means can merge centroids on degenerate data; nudge duplicates apart
    # deterministically so the no-two-identical-codewords invariant holds.
    entries = _dedupe(entries, patches)
    return Codebook(entries, version=f"v{CODEBOOK_FORMAT_VERSION}", seed=seed,
                    inertia=tuple(trace))


def _dedupe(entries: np.ndarray, patches: np.ndarray) -> np.ndarray:
    scale = max(float(np.abs(patches).max()), 1.0)
    out = entries.copy()
    seen = {}
    for j in range(out.shape[0]):
        key = out[j].tobytes()
        bump = 0
        while key in seen:
            bump += 1
            out[j] = entries[j] + bump * 1e-9 * scale * (j + 1)
            key = out[j].tobytes()
        seen[key] = j
    return out


def vq_encode(m: MelSpectrogram, cb: Codebook) -> TokenGrid:
    """Quantize a mel to its nearest-codeword token grid (mask all false)."""
    patches, (F, T) = patchify(m)
    if patches.shape[1] != cb.dim:
        raise ValueError(f"patch dim {patches.shape[1]} != codebook dim {cb.dim}")
    labels, _ = _assign(patches, cb.entries)
    return TokenGrid(labels.reshape(F, T), np.zeros((F, T), dtype=bool))


def vq_decode(g: TokenGrid, cb: Codebook, cfg: StftConfig | None = None,
              frames: int | None = None) -> MelSpectrogram:
    """Tile codewords back into a mel. The grid must be fully unmasked."""
    if g.mask.any():
        raise ValueError(f"cannot decode a grid with {g.num_masked} masked cells")
    if g.indices.size and (g.indices.min() < 0 or g.indices.max() >= cb.size):
        raise ValueError("grid contains indices outside the codebook")
    F, T = g.shape
    patches = cb.entries[g.indices.reshape(-1)]
    data = unpatchify(patches, (F, T), frames=frames)
    if cfg is None:
        cfg = StftConfig(mel_bins=F * PATCH)
    return MelSpectrogram(data, cfg)


def save_codebook(path, cb: Codebook):
    """Versioned codebook checkpoint: npz with a JSON header and row-major entries."""
    header = {
        "format_version": CODEBOOK_FORMAT_VERSION,
        "K": cb.size,
        "D": cb.dim,
        "version": cb.version,
        "seed": cb.seed,
        "sha256": cb.sha256(),
    }
    np.savez(path, header=json.dumps(header), entries=cb.entries,
             inertia=np.asarray(cb.inertia))


def load_codebook(path) -> Codebook:
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            entries = z["entries"]
            inertia = tuple(float(x) for x in z["inertia"])
    except FileNotFoundError:
        raise CheckpointError(f"codebook checkpoint not found: {path}") from None
    except Exception as e:
        raise CheckpointError(f"cannot read codebook checkpoint {path}: {e}") from e
    if header.get("format_version") != CODEBOOK_FORMAT_VERSION:
        raise CheckpointError(
            f"codebook format version {header.get('format_version')} is not "
            f"supported (expected {CODEBOOK_FORMAT_VERSION})"
        )
    cb = Codebook(entries, version=header["version"], seed=header["seed"],
                  inertia=inertia)
    if cb.sha256() != header["sha256"]:
        raise CheckpointError(f"codebook checkpoint {path} failed its content hash")
    return cb
