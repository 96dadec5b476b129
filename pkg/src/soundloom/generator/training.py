"""Masked-token training: variable-ratio masking, condition dropout, Adam.

Each example gets an independent mask ratio (uniform draw, cosine
warped) and its loss is cross-entropy on the masked positions only.
With probability `cond_dropout` an example's condition is swapped for
the learned null vector, which is what makes unconditioned logits
available for guidance at decode time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ..codec import TokenGrid
from .model import MaskedTokenModel


@dataclass
class TrainReport:
    initial_loss: float = 0.0
    epoch_losses: list = field(default_factory=list)
    examples_seen: int = 0
    uncond_examples: int = 0

    @property
    def uncond_fraction(self) -> float:
        return self.uncond_examples / max(self.examples_seen, 1)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            w.writerow([0, self.initial_loss])
            for i, loss in enumerate(self.epoch_losses, start=1):
                w.writerow([i, loss])


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[k] / b1c
            vhat = self.v[k] / b2c
            p -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def masked_cross_entropy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray):
    """Mean cross-entropy over masked cells and its gradient wrt logits.

    logits (B, N, K), targets (B, N) codeword ids, mask (B, N) bool.
    The gradient is zero at unmasked cells.
    """
    B, N, K = logits.shape
    flat = logits.reshape(-1, K).astype(np.float64)
    sel = mask.reshape(-1)
    count = int(sel.sum())
    if count == 0:
        return 0.0, np.zeros_like(logits)
    lsel = flat[sel]
    tsel = targets.reshape(-1)[sel]
    shifted = lsel - lsel.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted[np.arange(count), tsel] - logz
    loss = float(-logp.mean())
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(count), tsel] -= 1.0
    dflat = np.zeros((B * N, K))
    dflat[sel] = probs / count
    return loss, dflat.reshape(B, N, K)


def draw_mask_ratio(rng) -> float:
    """Uniform draw warped through the cosine schedule; high ratios are common."""
    return math.cos(0.5 * math.pi * rng.random())


def _build_batch(model, grids, conds, dropout, rng):
    cfg = model.config
    B = len(grids)
    N = cfg.cells
    tokens = np.stack([g.indices for g in grids]).reshape(B, *cfg.grid)
    targets = tokens.reshape(B, N).copy()
    mask = np.zeros((B, N), dtype=bool)
    cond_vecs = np.zeros((B, cfg.cond_dim))
    null_rows = np.zeros(B, dtype=bool)
    tokens = tokens.reshape(B, N)
    for i in range(B):
        ratio = draw_mask_ratio(rng)
        n_mask = max(1, math.ceil(ratio * N))
        cells = rng.choice(N, size=n_mask, replace=False)
        mask[i, cells] = True
        emb = conds[i] if conds is not None else None
        dropped = rng.random() < dropout
        if emb is None or dropped:
            null_rows[i] = True
            tokens[i, cells] = cfg.mask_id
        else:
            cond_vecs[i] = emb.vector
            fill = cfg.cmask_id if cfg.cond_mode == "cmask" else cfg.mask_id
            tokens[i, cells] = fill
    return tokens.reshape(B, *cfg.grid), targets, mask, cond_vecs, null_rows


def evaluate_loss(model, grids, conds=None, seed=0, max_examples=64):
    """Masked CE without updating weights; same masking law as training."""
    rng = np.random.default_rng(seed)
    grids = grids[:max_examples]
    conds = conds[:max_examples] if conds is not None else None
    tokens, targets, mask, cond_vecs, null_rows = _build_batch(
        model, grids, conds, dropout=0.0, rng=rng
    )
    logits, _ = model.forward_train(tokens, cond=cond_vecs, null_rows=null_rows)
    loss, _ = masked_cross_entropy(logits, targets, mask)
    return loss


def train_masked(model: MaskedTokenModel, corpus, conds=None, epochs=10,
                 batch_size=8, lr=1e-3, cond_dropout=0.1, seed=0,
                 loss_csv=None) -> TrainReport:
    """Train in place; returns the loss trace and condition-dropout accounting."""
    if not corpus:
        raise ValueError("training corpus is empty")
    if conds is not None and len(conds) != len(corpus):
        raise ValueError("conds must align one-to-one with the corpus")
    rng = np.random.default_rng(seed)
    opt = Adam(model.params, lr=lr)
    report = TrainReport(initial_loss=evaluate_loss(model, corpus, conds, seed=seed))
    n = len(corpus)
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            grids = [corpus[i] for i in idx]
            cbatch = [conds[i] for i in idx] if conds is not None else None
            tokens, targets, mask, cond_vecs, null_rows = _build_batch(
                model, grids, cbatch, cond_dropout, rng
            )
            logits, cache = model.forward_train(tokens, cond=cond_vecs, null_rows=null_rows)
            loss, dlogits = masked_cross_entropy(logits, targets, mask)
            grads = model.backward(cache, dlogits)
            opt.step(grads)
            epoch_loss += loss
            batches += 1
            report.examples_seen += len(idx)
            report.uncond_examples += int(null_rows.sum())
        report.epoch_losses.append(epoch_loss / max(batches, 1))
    if loss_csv is not None:
        report.write_csv(loss_csv)
    return report


def masked_token_accuracy(model: MaskedTokenModel, grid: TokenGrid, cond=None) -> float:
    """Fraction of cells predicted correctly when the whole grid is masked."""
    cfg = model.config
    tokens = np.full((1, *cfg.grid), cfg.mask_id, dtype=np.int64)
    vec = None if cond is None else cond.vector
    logits = model.forward(tokens, cond=vec)
    pred = logits[0].argmax(axis=-1).reshape(cfg.grid)
    return float((pred == grid.indices).mean())
