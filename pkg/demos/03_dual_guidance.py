"""Dual text + audio guidance.

Three predictions are made for the same masked cells: one with the
learned null condition, one steered by a text prompt, one steered by an
audio query. They are combined as

    combined = uncond + t * ((text - uncond) + (audio - uncond))

so t = 0 falls back to the unconditioned model exactly, and larger t
pushes the distribution toward both conditions at once.

Run:  python demos/03_dual_guidance.py
"""

import numpy as np

from soundloom.codec import TokenGrid
from soundloom.conditioning import embed_audio, embed_text, null_embedding
from soundloom.dsp import synthesize_tone
from soundloom.generator import GeneratorConfig, MaskedTokenModel, cfg_combine, predict_masked

model = MaskedTokenModel(GeneratorConfig())
grid = TokenGrid.fully_masked(model.config.grid)

text = embed_text("slow collapse of distant bells")
audio = embed_audio(synthesize_tone(220.0, 2.0, 48000))
null = null_embedding(model)
print(f"text/audio/null embeddings: dim {text.dim}, norms "
      f"{np.linalg.norm(text.vector):.3f} / {np.linalg.norm(audio.vector):.3f} / "
      f"{np.linalg.norm(null.vector):.3f}")

l_uncond = predict_masked(model, grid, cond=None)
l_text = predict_masked(model, grid, cond=text)
l_audio = predict_masked(model, grid, cond=audio)

for t in (0.0, 1.0, 2.5):
    combined = cfg_combine(l_uncond, l_text, l_audio, t)
    moved = np.abs(combined.values - l_uncond.values).mean()
    flips = int((combined.values.argmax(1) != l_uncond.values.argmax(1)).sum())
    print(f"t={t:3.1f}: mean |logit shift| {moved:.4f}, "
          f"{flips}/960 cells change their best token")

# The t=0 case is not approximate, it is the same array.
assert np.array_equal(cfg_combine(l_uncond, l_text, l_audio, 0.0).values,
                      l_uncond.values)
print("t=0 reproduces the unconditioned logits bit for bit")
