"""Mask-ratio schedules, guidance combination, and iterative parallel decoding.

Decoding starts from a grid with any mix of fixed and masked cells,
commits the most confident sampled tokens each step, and finishes with
every cell resolved. The number of cells still masked after step s is
ceil(ratio(s) * M0), a pure function of the schedule and the initial
masked count, independent of model weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..codec import TokenGrid
from ..errors import ConfigError
from .model import MaskedLogits, MaskedTokenModel, predict_masked


@dataclass(frozen=True)
class MaskSchedule:
    kind: str = "cosine"
    total_iters: int = 16

    def __post_init__(self):
        if self.kind not in ("cosine", "linear"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.total_iters < 1:
            raise ConfigError(f"total_iters must be >= 1, got {self.total_iters}")


def mask_ratio(schedule: MaskSchedule, step: int) -> float:
    """Fraction of cells still masked after `step` of `total_iters` steps.

    Starts at 1, ends at exactly 0, strictly decreasing in between.
    """
    if not 0 <= step <= schedule.total_iters:
        raise ValueError(
            f"step {step} outside [0, {schedule.total_iters}]"
        )
    if step == schedule.total_iters:
        return 0.0  # cos(pi/2) in floats is 6e-17, which would strand one cell
    frac = step / schedule.total_iters
    if schedule.kind == "cosine":
        return math.cos(0.5 * math.pi * frac)
    return 1.0 - frac


def masked_count_trajectory(schedule: MaskSchedule, initial_masked: int) -> list[int]:
    """Masked-cell count after each step; the decode loop follows this exactly."""
    return [
        math.ceil(mask_ratio(schedule, s) * initial_masked)
        for s in range(1, schedule.total_iters + 1)
    ]


def cfg_combine(l_uncond: MaskedLogits, l_text: MaskedLogits,
                l_audio: MaskedLogits, t: float) -> MaskedLogits:
    """Dual-condition guidance:

        combined = uncond + t * ((text - uncond) + (audio - uncond))

    evaluated elementwise and exactly; all three inputs must cover the
    identical masked-cell set.
    """
    if t < 0:
        raise ValueError(f"guidance scale must be >= 0, got {t}")
    if not (l_uncond.same_cells(l_text) and l_uncond.same_cells(l_audio)):
        raise ValueError("logit sets are defined on different masked-cell sets")
    u, tx, au = l_uncond.values, l_text.values, l_audio.values
    combined = u + t * ((tx - u) + (au - u))
    return MaskedLogits(l_uncond.cells.copy(), combined)


def _single_cfg(l_uncond: MaskedLogits, l_cond: MaskedLogits, t: float) -> MaskedLogits:
    if not l_uncond.same_cells(l_cond):
        raise ValueError("logit sets are defined on different masked-cell sets")
    return MaskedLogits(l_uncond.cells.copy(),
                        l_uncond.values + t * (l_cond.values - l_uncond.values))


def guided_logits(model: MaskedTokenModel, grid: TokenGrid, conds: dict | None,
                  t: float) -> MaskedLogits:
    """One guided prediction over the masked cells of `grid`.

    `conds` may hold "text" and/or "audio" CondEmbeddings. Branches are
    batched through a single forward pass; with t == 0 or no conditions
    only the unconditioned branch runs (identical result, one branch).
    """
    if t < 0:
        raise ValueError(f"guidance scale must be >= 0, got {t}")
    conds = conds or {}
    text = conds.get("text")
    audio = conds.get("audio")
    branches = [c for c in (text, audio) if c is not None]
    if t == 0.0 or not branches:
        return predict_masked(model, grid, cond=None)

    cfg = model.config
    flat_mask = grid.mask.reshape(-1)
    rows = np.flatnonzero(flat_mask)
    cells = np.argwhere(grid.mask)
    B = 1 + len(branches)
    tokens = np.repeat(grid.indices[None], B, axis=0)
    tokens[0][grid.mask] = cfg.mask_id
    fill = cfg.cmask_id if cfg.cond_mode == "cmask" else cfg.mask_id
    for i in range(1, B):
        tokens[i][grid.mask] = fill
    cond = np.zeros((B, cfg.cond_dim))
    for i, emb in enumerate(branches, start=1):
        if emb.vector.size != cfg.cond_dim:
            raise ValueError(
                f"cond dim {emb.vector.size} != model cond_dim {cfg.cond_dim}"
            )
        cond[i] = emb.vector
    null_rows = np.zeros(B, dtype=bool)
    null_rows[0] = True
    logits = model.forward(tokens, cond=cond, null_rows=null_rows, rows=rows)
    parts = [MaskedLogits(cells, logits[i].astype(np.float64)) for i in range(B)]
    if text is not None and audio is not None:
        return cfg_combine(parts[0], parts[1], parts[2], t)
    return _single_cfg(parts[0], parts[1], t)


def iterative_decode(model: MaskedTokenModel, init: TokenGrid, conds: dict | None = None,
                     t: float = 0.0, schedule: MaskSchedule | None = None,
                     seed: int = 0, temperature: float | None = None,
                     choice_temperature: float | None = None,
                     return_trace: bool = False):
    """Resolve every masked cell of `init` by confidence-ordered parallel decoding.

    Cells fixed at input are never modified, and a cell is never
    rewritten once committed. `temperature` 0 means greedy token choice.
    Deterministic for fixed weights, conditions, and seed.
    """
    cfg = model.config
    if init.shape != cfg.grid:
        raise ValueError(f"grid shape {init.shape} != model grid {cfg.grid}")
    if schedule is None:
        schedule = MaskSchedule("cosine", cfg.decode_iters)
    if temperature is None:
        temperature = cfg.temperature
    if choice_temperature is None:
        choice_temperature = cfg.choice_temperature
    if temperature < 0 or choice_temperature < 0:
        raise ValueError("temperatures must be >= 0")

    grid = init.copy()
    m0 = grid.num_masked
    trace: list[int] = []
    if m0 == 0:
        return (grid, trace) if return_trace else grid

    rng = np.random.default_rng(seed)
    total = schedule.total_iters
    targets = masked_count_trajectory(schedule, m0)
    for step, target in enumerate(targets, start=1):
        current = grid.num_masked
        commit = current - target
        if commit <= 0:
            trace.append(current)
            continue
        ml = guided_logits(model, grid, conds, t)
        values = ml.values
        if temperature == 0.0:
            sampled = values.argmax(axis=1)
        else:
            gumbel = rng.gumbel(size=values.shape)
            sampled = (values / temperature + gumbel).argmax(axis=1)
        # confidence = model probability of the sampled token + annealed noise
        shifted = values - values.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        conf = probs[np.arange(values.shape[0]), sampled]
        anneal = choice_temperature * (1.0 - step / total)
        if anneal > 0.0:
            conf = conf + anneal * rng.gumbel(size=conf.shape)
        order = np.argsort(-conf, kind="stable")[:commit]
        chosen = ml.cells[order]
        grid.indices[chosen[:, 0], chosen[:, 1]] = sampled[order]
        grid.mask[chosen[:, 0], chosen[:, 1]] = False
        trace.append(grid.num_masked)
        if trace[-1] != target:
            raise AssertionError(
                f"decode step {step}: masked count {trace[-1]} != target {target}"
            )
    return (grid, trace) if return_trace else grid
