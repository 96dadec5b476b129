"""Bidirectional transformer over mel-patch token grids.

Plain numpy, forward and backward written out by hand. Grid cells are
flattened row-major to a sequence; the vocabulary is the codebook plus a
mask symbol and a conditional-mask symbol. Condition vectors enter
either added to every cell embedding ("add") or only at masked cells
carrying the conditional-mask symbol ("cmask").

Weights are immutable during inference; any number of decode calls may
share one model across threads. Training mutates weights and must be
exclusive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..codec import TokenGrid
from ..errors import ConfigError

_LN_EPS = 1e-5


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture and decoding knobs.

    The desk-scale default (2 blocks, 128 dim, 4 heads over a 16x60 grid)
    trains in minutes on a laptop core; the full-scale shape
    (12 blocks, 768 dim, 12 heads) is accepted for shape checks.
    """

    blocks: int = 2
    dim: int = 128
    heads: int = 4
    codebook_size: int = 256
    grid: tuple[int, int] = (16, 60)
    decode_iters: int = 16
    cond_dim: int = 64
    cond_mode: str = "add"  # "add" | "cmask"
    mlp_ratio: int = 4
    temperature: float = 1.0
    choice_temperature: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.decode_iters < 1:
            raise ConfigError(f"decode_iters must be >= 1, got {self.decode_iters}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.codebook_size < 2:
            raise ConfigError(f"codebook_size must be >= 2, got {self.codebook_size}")
        if self.cond_mode not in ("add", "cmask"):
            raise ConfigError(f"cond_mode must be 'add' or 'cmask', got {self.cond_mode!r}")
        object.__setattr__(self, "grid", tuple(self.grid))

    @property
    def vocab(self) -> int:
        return self.codebook_size + 2  # codewords + mask + conditional mask

    @property
    def mask_id(self) -> int:
        return self.codebook_size

    @property
    def cmask_id(self) -> int:
        return self.codebook_size + 1

    @property
    def cells(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass
class MaskedLogits:
    """Per-cell codeword logits, defined only on masked cells.

    `cells` holds (f, t) coordinates in row-major grid order; `values`
    is aligned (M, K) float64.
    """

    cells: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.cells.ndim != 2 or self.cells.shape[1] != 2:
            raise ValueError(f"cells must be (M, 2), got {self.cells.shape}")
        if self.values.shape[0] != self.cells.shape[0]:
            raise ValueError("cells and values disagree on the masked-cell count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("logits contain non-finite values")

    def same_cells(self, other: "MaskedLogits") -> bool:
        return self.cells.shape == other.cells.shape and bool(
            np.array_equal(self.cells, other.cells)
        )


def _normal(rng, shape, dtype, scale=0.02):
    return (rng.standard_normal(shape) * scale).astype(dtype)


class MaskedTokenModel:
    """Token-grid transformer with explicit forward/backward passes."""

    def __init__(self, config: GeneratorConfig, dtype=np.float32, params=None):
        self.config = config
        self.dtype = np.dtype(dtype)
        if params is not None:
            self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}
        else:
            self.params = self._init_params()

    def _init_params(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        dt = self.dtype
        F, T = cfg.grid
        D, H = cfg.dim, cfg.mlp_ratio * cfg.dim
        p = {
            "tok_emb": _normal(rng, (cfg.vocab, D), dt),
            "pos_f": _normal(rng, (F, D), dt),
            "pos_t": _normal(rng, (T, D), dt),
            "cond_w": _normal(rng, (cfg.cond_dim, D), dt),
            "cond_b": np.zeros(D, dtype=dt),
            "null_cond": _normal(rng, (cfg.cond_dim,), dt),
            "ln_f.g": np.ones(D, dtype=dt),
            "ln_f.b": np.zeros(D, dtype=dt),
            "head_w": _normal(rng, (D, cfg.codebook_size), dt),
            "head_b": np.zeros(cfg.codebook_size, dtype=dt),
        }
        for b in range(cfg.blocks):
            p[f"b{b}.ln1.g"] = np.ones(D, dtype=dt)
            p[f"b{b}.ln1.b"] = np.zeros(D, dtype=dt)
            p[f"b{b}.qkv_w"] = _normal(rng, (D, 3 * D), dt)
            p[f"b{b}.qkv_b"] = np.zeros(3 * D, dtype=dt)
            p[f"b{b}.out_w"] = _normal(rng, (D, D), dt)
            p[f"b{b}.out_b"] = np.zeros(D, dtype=dt)
            p[f"b{b}.ln2.g"] = np.ones(D, dtype=dt)
            p[f"b{b}.ln2.b"] = np.zeros(D, dtype=dt)
            p[f"b{b}.mlp1_w"] = _normal(rng, (D, H), dt)
            p[f"b{b}.mlp1_b"] = np.zeros(H, dtype=dt)
            p[f"b{b}.mlp2_w"] = _normal(rng, (H, D), dt)
            p[f"b{b}.mlp2_b"] = np.zeros(D, dtype=dt)
        return p

    @property
    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # ---------------- forward ----------------

    def _effective_cond(self, batch: int, cond, null_rows):
        """Resolve the per-row condition matrix and which rows use the null vector."""
        cfg = self.config
        null = self.params["null_cond"]
        if null_rows is None:
            null_rows = np.zeros(batch, dtype=bool) if cond is not None else np.ones(batch, dtype=bool)
        null_rows = np.asarray(null_rows, dtype=bool)
        eff = np.empty((batch, cfg.cond_dim), dtype=self.dtype)
        eff[null_rows] = null
        if cond is not None:
            cond = np.asarray(cond, dtype=self.dtype)
            if cond.ndim == 1:
                cond = np.broadcast_to(cond, (batch, cfg.cond_dim))
            if cond.shape != (batch, cfg.cond_dim):
                raise ValueError(
                    f"cond shape {cond.shape} does not match (batch, {cfg.cond_dim})"
                )
            eff[~null_rows] = cond[~null_rows]
        elif not null_rows.all():
            raise ValueError("cond is None but some rows are not null rows")
        return eff, null_rows

    def _ln(self, x, g, b):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + _LN_EPS)
        xhat = xc * inv
        return xhat * g + b, xhat, inv

    def _attention(self, x, b, rows=None):
        """Pre-norm self attention. If `rows` is given, only those sequence
        positions are produced (keys and values still span the full grid)."""
        p = self.params
        B, N, D = x.shape
        H = self.config.heads
        hd = D // H
        h, _, _ = self._ln(x, p[f"b{b}.ln1.g"], p[f"b{b}.ln1.b"])
        qkv = (h.reshape(-1, D) @ p[f"b{b}.qkv_w"] + p[f"b{b}.qkv_b"]).reshape(B, N, 3, H, hd)
        k = np.ascontiguousarray(qkv[:, :, 1].transpose(0, 2, 3, 1).reshape(B * H, hd, N))
        v = np.ascontiguousarray(qkv[:, :, 2].transpose(0, 2, 1, 3).reshape(B * H, N, hd))
        if rows is None:
            q = qkv[:, :, 0]
        else:
            q = qkv[:, rows, 0]
        M = q.shape[1]
        q = np.ascontiguousarray(q.transpose(0, 2, 1, 3).reshape(B * H, M, hd))
        q *= np.asarray(1.0 / np.sqrt(hd), dtype=self.dtype)
        s = np.matmul(q, k)
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s *= 1.0 / s.sum(axis=-1, keepdims=True)
        o = np.matmul(s, v).reshape(B, H, M, hd).transpose(0, 2, 1, 3).reshape(B * M, D)
        return (o @ p[f"b{b}.out_w"] + p[f"b{b}.out_b"]).reshape(B, M, D)

    def _mlp(self, x, b):
        p = self.params
        B, M, D = x.shape
        h, _, _ = self._ln(x, p[f"b{b}.ln2.g"], p[f"b{b}.ln2.b"])
        a = h.reshape(-1, D) @ p[f"b{b}.mlp1_w"] + p[f"b{b}.mlp1_b"]
        np.maximum(a, 0.0, out=a)
        return (a @ p[f"b{b}.mlp2_w"] + p[f"b{b}.mlp2_b"]).reshape(B, M, D)

    def _embed(self, tokens, eff_cond):
        cfg = self.config
        p = self.params
        B = tokens.shape[0]
        F, T = cfg.grid
        x = p["tok_emb"][tokens].astype(self.dtype, copy=True)
        x += p["pos_f"][None, :, None, :]
        x += p["pos_t"][None, None, :, :]
        projected = eff_cond @ p["cond_w"] + p["cond_b"]
        if cfg.cond_mode == "add":
            x += projected[:, None, None, :]
            add_mask = None
        else:
            add_mask = (tokens == cfg.mask_id) | (tokens == cfg.cmask_id)
            x[add_mask] += np.repeat(projected, add_mask.reshape(B, -1).sum(axis=1), axis=0)
        return x.reshape(B, F * T, cfg.dim), add_mask

    def forward(self, tokens: np.ndarray, cond=None, null_rows=None,
                rows: np.ndarray | None = None) -> np.ndarray:
        """Inference forward. tokens (B, F, T) int -> logits.

        Returns (B, N, K) float, or (B, M, K) over `rows` (flat cell
        indices) when given; in that case only the last block's queries,
        MLP, and head are evaluated at those positions, which is
        bit-identical to slicing the full result.
        """
        cfg = self.config
        tokens = np.asarray(tokens)
        if tokens.ndim == 2:
            tokens = tokens[None]
        if tokens.shape[1:] != cfg.grid:
            raise ValueError(f"token grid {tokens.shape[1:]} != config grid {cfg.grid}")
        if tokens.min() < 0 or tokens.max() >= cfg.vocab:
            raise ValueError("token id outside vocabulary")
        eff_cond, _ = self._effective_cond(tokens.shape[0], cond, null_rows)
        x, _ = self._embed(tokens, eff_cond)
        p = self.params
        last = cfg.blocks - 1
        for b in range(last):
            x = x + self._attention(x, b)
            x = x + self._mlp(x, b)
        if rows is None:
            x = x + self._attention(x, last)
            x = x + self._mlp(x, last)
            h, _, _ = self._ln(x, p["ln_f.g"], p["ln_f.b"])
        else:
            rows = np.asarray(rows, dtype=np.int64)
            xr = x[:, rows] + self._attention(x, last, rows=rows)
            xr = xr + self._mlp(xr, last)
            h, _, _ = self._ln(xr, p["ln_f.g"], p["ln_f.b"])
        B, M, D = h.shape
        logits = (h.reshape(-1, D) @ p["head_w"] + p["head_b"]).reshape(B, M, -1)
        return logits

    # ---------------- training forward + backward ----------------

    def forward_train(self, tokens: np.ndarray, cond=None, null_rows=None):
        """Full forward that records every intermediate needed by `backward`."""
        cfg = self.config
        p = self.params
        tokens = np.asarray(tokens)
        B = tokens.shape[0]
        N, D = cfg.cells, cfg.dim
        eff_cond, null_rows = self._effective_cond(B, cond, null_rows)
        x, add_mask = self._embed(tokens, eff_cond)
        cache = {
            "tokens": tokens, "eff_cond": eff_cond, "null_rows": null_rows,
            "add_mask": add_mask, "blocks": [],
        }
        H = cfg.heads
        hd = D // H
        scale = np.asarray(1.0 / np.sqrt(hd), dtype=self.dtype)
        for b in range(cfg.blocks):
            bc = {"x_in": x}
            h, xhat, inv = self._ln(x, p[f"b{b}.ln1.g"], p[f"b{b}.ln1.b"])
            bc["ln1"] = (xhat, inv)
            bc["h1"] = h
            qkv = (h.reshape(-1, D) @ p[f"b{b}.qkv_w"] + p[f"b{b}.qkv_b"]).reshape(B, N, 3, H, hd)
            q = np.ascontiguousarray(qkv[:, :, 0].transpose(0, 2, 1, 3)) * scale
            k = np.ascontiguousarray(qkv[:, :, 1].transpose(0, 2, 1, 3))
            v = np.ascontiguousarray(qkv[:, :, 2].transpose(0, 2, 1, 3))
            s = np.matmul(q, k.transpose(0, 1, 3, 2))
            s -= s.max(axis=-1, keepdims=True)
            np.exp(s, out=s)
            s *= 1.0 / s.sum(axis=-1, keepdims=True)
            o = np.matmul(s, v).transpose(0, 2, 1, 3).reshape(B * N, D)
            bc["qs"], bc["k"], bc["v"], bc["probs"], bc["o"] = q, k, v, s, o
            x = x + (o @ p[f"b{b}.out_w"] + p[f"b{b}.out_b"]).reshape(B, N, D)
            bc["x_mid"] = x
            h2, xhat2, inv2 = self._ln(x, p[f"b{b}.ln2.g"], p[f"b{b}.ln2.b"])
            bc["ln2"] = (xhat2, inv2)
            bc["h2"] = h2
            a = h2.reshape(-1, D) @ p[f"b{b}.mlp1_w"] + p[f"b{b}.mlp1_b"]
            np.maximum(a, 0.0, out=a)
            bc["relu"] = a
            x = x + (a @ p[f"b{b}.mlp2_w"] + p[f"b{b}.mlp2_b"]).reshape(B, N, D)
            cache["blocks"].append(bc)
        hf, xhatf, invf = self._ln(x, p["ln_f.g"], p["ln_f.b"])
        cache["ln_f"] = (xhatf, invf)
        cache["hf"] = hf
        logits = (hf.reshape(-1, D) @ p["head_w"] + p["head_b"]).reshape(B, N, -1)
        return logits, cache

    def _ln_backward(self, dy, xhat, inv, g):
        dg = (dy * xhat).sum(axis=(0, 1))
        db = dy.sum(axis=(0, 1))
        dxhat = dy * g
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        return dx, dg, db

    def backward(self, cache, dlogits: np.ndarray):
        """Gradients of a scalar loss wrt every parameter, given d(loss)/d(logits)."""
        cfg = self.config
        p = self.params
        tokens = cache["tokens"]
        B = tokens.shape[0]
        N, D, H = cfg.cells, cfg.dim, cfg.heads
        hd = D // H
        scale = np.asarray(1.0 / np.sqrt(hd), dtype=self.dtype)
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dl = np.asarray(dlogits, dtype=self.dtype).reshape(B * N, -1)

        hf = cache["hf"].reshape(B * N, D)
        grads["head_w"] += hf.T @ dl
        grads["head_b"] += dl.sum(axis=0)
        dhf = (dl @ p["head_w"].T).reshape(B, N, D)
        xhatf, invf = cache["ln_f"]
        dx, dg, db = self._ln_backward(dhf, xhatf, invf, p["ln_f.g"])
        grads["ln_f.g"] += dg
        grads["ln_f.b"] += db

        for b in reversed(range(cfg.blocks)):
            bc = cache["blocks"][b]
            # MLP branch
            da = (dx.reshape(-1, D) @ p[f"b{b}.mlp2_w"].T)
            relu = bc["relu"]
            grads[f"b{b}.mlp2_w"] += relu.T @ dx.reshape(-1, D)
            grads[f"b{b}.mlp2_b"] += dx.reshape(-1, D).sum(axis=0)
            da[relu <= 0.0] = 0.0
            h2 = bc["h2"].reshape(-1, D)
            grads[f"b{b}.mlp1_w"] += h2.T @ da
            grads[f"b{b}.mlp1_b"] += da.sum(axis=0)
            dh2 = (da @ p[f"b{b}.mlp1_w"].T).reshape(B, N, D)
            xhat2, inv2 = bc["ln2"]
            dx2, dg, db = self._ln_backward(dh2, xhat2, inv2, p[f"b{b}.ln2.g"])
            grads[f"b{b}.ln2.g"] += dg
            grads[f"b{b}.ln2.b"] += db
            dx = dx + dx2
            # attention branch
            do = dx.reshape(-1, D)
            grads[f"b{b}.out_w"] += bc["o"].T @ do
            grads[f"b{b}.out_b"] += do.sum(axis=0)
            doh = (do @ p[f"b{b}.out_w"].T).reshape(B, N, H, hd).transpose(0, 2, 1, 3)
            probs, v, k, qs = bc["probs"], bc["v"], bc["k"], bc["qs"]
            dprobs = np.matmul(doh, v.transpose(0, 1, 3, 2))
            dvh = np.matmul(probs.transpose(0, 1, 3, 2), doh)
            tmp = (dprobs * probs).sum(axis=-1, keepdims=True)
            ds = probs * (dprobs - tmp)
            dqs = np.matmul(ds, k)
            dkh = np.matmul(ds.transpose(0, 1, 3, 2), qs)
            dqkv = np.empty((B, N, 3, H, hd), dtype=self.dtype)
            dqkv[:, :, 0] = (dqs * scale).transpose(0, 2, 1, 3)
            dqkv[:, :, 1] = dkh.transpose(0, 2, 1, 3)
            dqkv[:, :, 2] = dvh.transpose(0, 2, 1, 3)
            dqkv = dqkv.reshape(B * N, 3 * D)
            h1 = bc["h1"].reshape(-1, D)
            grads[f"b{b}.qkv_w"] += h1.T @ dqkv
            grads[f"b{b}.qkv_b"] += dqkv.sum(axis=0)
            dh1 = (dqkv @ p[f"b{b}.qkv_w"].T).reshape(B, N, D)
            xhat1, inv1 = bc["ln1"]
            dx1, dg, db = self._ln_backward(dh1, xhat1, inv1, p[f"b{b}.ln1.g"])
            grads[f"b{b}.ln1.g"] += dg
            grads[f"b{b}.ln1.b"] += db
            dx = dx + dx1

        # embedding stage
        F, T = cfg.grid
        dxg = dx.reshape(B, F, T, D)
        np.add.at(grads["tok_emb"], tokens.reshape(-1), dx.reshape(-1, D))
        grads["pos_f"] += dxg.sum(axis=(0, 2))
        grads["pos_t"] += dxg.sum(axis=(0, 1))
        add_mask = cache["add_mask"]
        if cfg.cond_mode == "add":
            dproj = dxg.sum(axis=(1, 2))
        else:
            dproj = np.zeros((B, D), dtype=self.dtype)
            flat = dx.reshape(B, N, D)
            for i in range(B):
                sel = add_mask[i].reshape(-1)
                dproj[i] = flat[i][sel].sum(axis=0)
        eff_cond = cache["eff_cond"]
        grads["cond_w"] += eff_cond.T @ dproj
        grads["cond_b"] += dproj.sum(axis=0)
        dcond = dproj @ p["cond_w"].T
        null_rows = cache["null_rows"]
        if null_rows.any():
            grads["null_cond"] += dcond[null_rows].sum(axis=0)
        return grads


def predict_masked(model: MaskedTokenModel, grid: TokenGrid, cond=None) -> MaskedLogits:
    """Logits over codewords for every masked cell of `grid`.

    `cond` is a CondEmbedding or None; None means the learned
    unconditioned vector. Cells come back in row-major grid order.
    """
    cfg = model.config
    if grid.shape != cfg.grid:
        raise ValueError(f"grid shape {grid.shape} != model grid {cfg.grid}")
    flat_mask = grid.mask.reshape(-1)
    cells = np.argwhere(grid.mask)
    if cells.shape[0] == 0:
        return MaskedLogits(np.zeros((0, 2), dtype=np.int64),
                            np.zeros((0, cfg.codebook_size)))
    tokens = grid.indices.copy()
    conditioned = cond is not None
    fill = cfg.cmask_id if (conditioned and cfg.cond_mode == "cmask") else cfg.mask_id
    tokens[grid.mask] = fill
    vec = None if cond is None else cond.vector
    if vec is not None and vec.shape[0] != cfg.cond_dim:
        raise ValueError(f"cond dim {vec.shape[0]} != model cond_dim {cfg.cond_dim}")
    rows = np.flatnonzero(flat_mask)
    logits = model.forward(tokens[None], cond=vec, rows=rows)
    return MaskedLogits(cells, logits[0].astype(np.float64))
