"""Tour of the audio <-> token path.

A 10-second clip at 48 kHz becomes a 256x960 log-mel, is cut into
non-overlapping 16x16 patches, quantized against a k-means codebook into
a 16x60 grid of 960 tokens, and reconstructed back to audio through the
Griffin-Lim vocoder. 480,000 samples in, 960 integers out.

Run:  python demos/01_mel_codec_roundtrip.py
"""

import numpy as np

from soundloom.codec import patchify, train_codebook, vq_decode, vq_encode
from soundloom.corpus import CorpusFamily, synth_corpus
from soundloom.dsp import StftConfig, mel_to_wav, wav_to_mel
from soundloom.wavio import write_wav

cfg = StftConfig()  # 48 kHz, fft 2048, hop 500, 256 mel bins

# A tiny synthetic corpus stands in for real recordings.
waves, manifest = synth_corpus(
    [CorpusFamily("tone", 4, 10.0), CorpusFamily("chirp", 4, 10.0),
     CorpusFamily("noise", 4, 10.0)],
    seed=0, sample_rate=cfg.sample_rate,
)
print(f"corpus: {len(waves)} files, {manifest['total_seconds']:.0f} s total")

# Fit the codebook on every patch in the corpus.
patches = np.concatenate([patchify(wav_to_mel(w, cfg))[0] for w in waves])
print(f"patches: {patches.shape[0]} x {patches.shape[1]}")
codebook = train_codebook(patches, k=256, iters=10, seed=0)
print(f"codebook: K={codebook.size}, quantization error "
      f"{codebook.inertia[0]:.0f} -> {codebook.inertia[-1]:.0f}")

# Round trip one clip.
clip = waves[4]  # a chirp
mel = wav_to_mel(clip, cfg)
grid = vq_encode(mel, codebook)
print(f"mel {mel.data.shape} -> grid {grid.shape} "
      f"({grid.indices.size} tokens for {len(clip)} samples)")

recon_mel = vq_decode(grid, codebook, cfg)
err = np.abs(recon_mel.data - mel.data).mean()
print(f"mel L1 after quantization: {err:.3f}")

# Quantization is a projection: encoding the reconstruction changes nothing.
again = vq_encode(recon_mel, codebook)
assert np.array_equal(grid.indices, again.indices)
print("encode(decode(grid)) == grid")

audio = mel_to_wav(recon_mel, iterations=32, seed=0)
write_wav("demo_roundtrip.wav", audio.samples, cfg.sample_rate)
print(f"wrote demo_roundtrip.wav ({audio.duration:.1f} s)")
