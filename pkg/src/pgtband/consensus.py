"""Consensus references from several annotations.

``majority_vote`` takes the per-voxel mode. ``staple_fuse`` runs the binary
simultaneous truth and performance level estimation EM: the E-step gives
each voxel a posterior foreground weight from a scalar prior and every
rater's sensitivity ``p`` and specificity ``q``; the M-step re-estimates
``p`` and ``q`` from those weights. ``staple_labels`` extends this to label
grids one label at a time and takes the per-voxel argmax.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .grid import BinaryMask, LabelGrid, check_same_dims

CLAMP = 1e-6


@dataclass(frozen=True, eq=False)
class SoftConsensus:
    weights: np.ndarray
    spacing: tuple[float, ...]
    converged: bool = True
    n_iter: int = 0
    objective: tuple[float, ...] = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.size and (w.min() < 0 or w.max() > 1):
            raise ValueError("consensus weights must lie in [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.weights.shape)


@dataclass(frozen=True)
class RaterPerformance:
    rater_id: str
    p: float
    q: float


def majority_vote(grids: Sequence[LabelGrid]) -> LabelGrid:
    """Per-voxel most frequent label; ties go to the smallest label id."""
    grids = list(grids)
    if not grids:
        raise ValueError("majority_vote needs at least one grid")
    for g in grids[1:]:
        check_same_dims(grids[0], g)
    stack = np.stack([g.voxels for g in grids])
    best = np.zeros(stack.shape[1:], dtype=np.int64)
    best_label = np.zeros(stack.shape[1:], dtype=np.uint16)
    for label in np.unique(stack):
        count = np.count_nonzero(stack == label, axis=0)
        # labels ascend, so a strict comparison keeps the smaller label on ties
        better = count > best
        best[better] = count[better]
        best_label[better] = label
    return LabelGrid(best_label, grids[0].spacing, max(g.max_label for g in grids))


def _log_odds(d: np.ndarray, p: np.ndarray, q: np.ndarray, prior: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel log-likelihood of the data under foreground and background."""
    df = d.astype(float)
    log_fg = np.log(prior) + df.T @ np.log(p) + (1.0 - df).T @ np.log1p(-p)
    log_bg = np.log1p(-prior) + (1.0 - df).T @ np.log(q) + df.T @ np.log1p(-q)
    return log_fg, log_bg


def staple_fuse(masks: Sequence[BinaryMask], prior: float | None = None, tol: float = 1e-6,
                max_iter: int = 100, init_p: float = 0.9, init_q: float = 0.9,
                rater_ids: Sequence[str] | None = None) -> tuple[SoftConsensus, list[RaterPerformance]]:
    """Binary EM fusion. ``prior=None`` uses the mean rater foreground fraction.

    ``SoftConsensus.objective`` holds the observed-data log-likelihood at the
    start of every iteration; EM guarantees it never decreases.
    """
    masks = list(masks)
    if len(masks) < 2:
        raise ValueError("staple_fuse needs at least two masks")
    for m in masks[1:]:
        check_same_dims(masks[0], m)
    if not (0.5 < init_p < 1 and 0.5 < init_q < 1):
        raise ValueError("init_p and init_q must lie in (0.5, 1)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    ids = [str(i) for i in (rater_ids if rater_ids is not None else range(len(masks)))]
    if len(ids) != len(masks):
        raise ValueError("one rater id per mask required")

    shape, spacing = masks[0].dims, masks[0].spacing
    d = np.stack([m.bits.ravel() for m in masks])
    hi = 1.0 - CLAMP
    if (d == d[0]).all():
        perf = [RaterPerformance(r, hi, hi) for r in ids]
        return SoftConsensus(d[0].reshape(shape).astype(float), spacing, True, 0, ()), perf

    if prior is None:
        prior = float(d.mean())
    prior = float(np.clip(prior, CLAMP, hi))
    p = np.full(len(masks), float(init_p))
    q = np.full(len(masks), float(init_q))
    objective = []
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        log_fg, log_bg = _log_odds(d, p, q, prior)
        objective.append(float(np.logaddexp(log_fg, log_bg).sum()))
        w = expit(log_fg - log_bg)
        sw, sb = w.sum(), (1.0 - w).sum()
        new_p = (d @ w) / sw if sw > 0 else p
        new_q = ((~d) @ (1.0 - w)) / sb if sb > 0 else q
        new_p = np.clip(new_p, CLAMP, hi)
        new_q = np.clip(new_q, CLAMP, hi)
        delta = max(np.abs(new_p - p).max(), np.abs(new_q - q).max())
        p, q = new_p, new_q
        if delta < tol:
            converged = True
            break
    log_fg, log_bg = _log_odds(d, p, q, prior)
    objective.append(float(np.logaddexp(log_fg, log_bg).sum()))
    w = expit(log_fg - log_bg)
    perf = [RaterPerformance(r, float(pj), float(qj)) for r, pj, qj in zip(ids, p, q)]
    return SoftConsensus(w.reshape(shape), spacing, converged, n_iter, tuple(objective)), perf


def threshold_soft(w: SoftConsensus, t: float = 0.5) -> BinaryMask:
    return BinaryMask(w.weights >= t, w.spacing)


def staple_labels(grids: Sequence[LabelGrid], rater_ids: Sequence[str] | None = None,
                  **kwargs) -> tuple[LabelGrid, dict[int, tuple[SoftConsensus, list[RaterPerformance]]]]:
    """One-vs-rest STAPLE per label, fused by per-voxel argmax (ties to the smallest label)."""
    grids = list(grids)
    if len(grids) < 2:
        raise ValueError("staple_labels needs at least two grids")
    for g in grids[1:]:
        check_same_dims(grids[0], g)
    spacing = grids[0].spacing
    labels = np.unique(np.stack([g.voxels for g in grids]))
    fits = {}
    for label in labels:
        masks = [BinaryMask(g.voxels == label, spacing) for g in grids]
        fits[int(label)] = staple_fuse(masks, rater_ids=rater_ids, **kwargs)
    post = np.stack([fits[int(l)][0].weights for l in labels])
    fused = labels[np.argmax(post, axis=0)]
    return LabelGrid(fused, spacing, max(g.max_label for g in grids)), fits
