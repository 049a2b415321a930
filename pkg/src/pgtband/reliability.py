"""Inter- and intra-rater reliability with percentile-bootstrap intervals.

Reliability here is the mean pairwise similarity under a chosen metric.
Scores are first averaged over pairs within an item, then over items, so
heavily annotated items do not dominate. Bootstrap intervals resample items.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping

import numpy as np

from . import _parallel
from .grid import LabelGrid
from .metrics import MetricId, metric_id, score

INTER = "inter"
INTRA = "intra"


@dataclass(frozen=True)
class Item:
    """One annotated item: ``annotations[(rater_id, repeat)]`` -> grid."""

    item_id: str
    annotations: Mapping[tuple[str, int], LabelGrid]
    truth: LabelGrid | None = None

    def __post_init__(self):
        ann = {}
        for (rater, repeat), grid in self.annotations.items():
            if int(repeat) < 0:
                raise ValueError(f"item {self.item_id}: negative repeat index {repeat}")
            ann[(str(rater), int(repeat))] = _as_grid(grid)
        grids = list(ann.values()) + ([self.truth] if self.truth is not None else [])
        if grids:
            dims, spacing = grids[0].dims, grids[0].spacing
            for g in grids[1:]:
                if g.dims != dims or g.spacing != spacing:
                    raise ValueError(
                        f"item {self.item_id}: grids disagree on dims/spacing "
                        f"({dims}, {spacing}) vs ({g.dims}, {g.spacing})"
                    )
        object.__setattr__(self, "item_id", str(self.item_id))
        object.__setattr__(self, "annotations", dict(sorted(ann.items())))

    @property
    def raters(self) -> list[str]:
        return sorted({r for r, _ in self.annotations})

    def repeats(self, rater: str) -> list[int]:
        return sorted(k for r, k in self.annotations if r == rater)

    def get(self, rater: str, repeat: int = 0) -> LabelGrid:
        return self.annotations[(rater, repeat)]


def _as_grid(value) -> LabelGrid:
    """Category labels of classification datasets become 1x1 grids."""
    if isinstance(value, LabelGrid):
        return value
    if isinstance(value, (int, np.integer)) and value >= 0:
        return LabelGrid(np.array([[int(value)]]))
    raise TypeError(f"annotation must be a LabelGrid or a non-negative category id, got {value!r}")


@dataclass(frozen=True)
class RaterSet:
    items: tuple[Item, ...]

    def __post_init__(self):
        items = tuple(self.items)
        if not items:
            raise ValueError("a rater set needs at least one item")
        ids = [it.item_id for it in items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate item ids in rater set")
        object.__setattr__(self, "items", items)

    def sorted_items(self) -> list[Item]:
        return sorted(self.items, key=lambda it: it.item_id)

    def item(self, item_id: str) -> Item:
        for it in self.items:
            if it.item_id == item_id:
                return it
        raise KeyError(item_id)


@dataclass(frozen=True)
class BootstrapSpec:
    n_resamples: int = 1000
    level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.n_resamples < 100:
            raise ValueError(f"n_resamples must be >= 100, got {self.n_resamples}")
        if not 0 < self.level < 1:
            raise ValueError(f"level must lie in (0, 1), got {self.level}")


@dataclass(frozen=True)
class ReliabilityEstimate:
    kind: str
    metric: MetricId
    point: float
    ci_low: float
    ci_high: float
    n_items: int
    n_pairs: int
    seed: int
    n_undefined: int = 0
    per_item: tuple[tuple[str, float], ...] = field(default=(), repr=False)


def _resample_rng(seed: int, index: int) -> np.random.Generator:
    # one independent stream per resample; order of evaluation is irrelevant
    return np.random.default_rng([0x_b007, int(seed), int(index)])


def bootstrap_ci(per_item_scores, spec: BootstrapSpec) -> tuple[float, float]:
    """Nearest-rank percentile interval of item-resampled means."""
    scores = np.asarray(per_item_scores, dtype=float)
    if scores.size == 0:
        raise ValueError("bootstrap_ci needs at least one score")
    n = scores.size
    # centring keeps resampled means of constant scores exactly constant
    shift = scores[0]
    dev = scores - shift
    means = np.empty(spec.n_resamples)
    for r in range(spec.n_resamples):
        idx = _resample_rng(spec.seed, r).integers(0, n, size=n)
        means[r] = shift + dev[idx].mean()
    means.sort()
    alpha = (1.0 - spec.level) / 2.0
    lo = means[max(1, math.ceil(alpha * spec.n_resamples)) - 1]
    hi = means[max(1, math.ceil((1.0 - alpha) * spec.n_resamples)) - 1]
    return float(lo), float(hi)


def _pair_value(metric, a, b, label, similarity: bool):
    res = score(metric, a, b, label=label)
    if not res.defined:
        return None
    return res.similarity() if similarity else res.value


def _mean_defined(values):
    """(mean or None, n_defined, n_undefined) of pair values with None = undefined."""
    defined = [v for v in values if v is not None]
    mean = math.fsum(defined) / len(defined) if defined else None
    return mean, len(defined), len(values) - len(defined)


def _estimate(kind, set_, metric, boot, per_item_fn) -> ReliabilityEstimate:
    mid = metric_id(metric)
    results = _parallel.ordered_map(per_item_fn, set_.sorted_items())
    per_item = [(item_id, s) for item_id, s, _, _ in results if s is not None]
    n_pairs = sum(r[2] for r in results)
    n_undef = sum(r[3] for r in results)
    if not per_item:
        raise ValueError(f"{kind}-rater reliability: metric {mid.value} is undefined on every pair")
    scores = [s for _, s in per_item]
    point = math.fsum(scores) / len(scores)
    lo, hi = bootstrap_ci(scores, boot)
    # percentile intervals of skewed samples can miss the point estimate
    lo, hi = min(lo, point), max(hi, point)
    return ReliabilityEstimate(kind, mid, point, lo, hi, len(per_item), n_pairs, boot.seed,
                               n_undef, tuple(per_item))


def inter_rater(set_: RaterSet, metric, boot: BootstrapSpec | None = None, *,
                label: int | None = None, repeats: str = "first",
                similarity: bool = False) -> ReliabilityEstimate:
    """Mean pairwise similarity between distinct raters.

    ``repeats="first"`` compares repeat 0 of each rater; ``"mean"`` averages
    over every cross-rater repeat combination. ``similarity=True`` maps
    distance metrics to 1/(1+d) before aggregation.
    """
    if repeats not in ("first", "mean"):
        raise ValueError(f"repeats must be 'first' or 'mean', got {repeats!r}")
    boot = boot or BootstrapSpec()
    if all(len(it.raters) < 2 for it in set_.items):
        raise ValueError("inter-rater undefined: no item has two distinct raters")

    def per_item(it: Item):
        raters = it.raters
        values = []
        for ra, rb in combinations(raters, 2):
            if repeats == "first":
                if 0 not in it.repeats(ra) or 0 not in it.repeats(rb):
                    continue
                values.append(_pair_value(metric, it.get(ra), it.get(rb), label, similarity))
            else:
                for ka in it.repeats(ra):
                    for kb in it.repeats(rb):
                        values.append(_pair_value(metric, it.get(ra, ka), it.get(rb, kb),
                                                  label, similarity))
        return (it.item_id, *_mean_defined(values))

    return _estimate(INTER, set_, metric, boot, per_item)


def intra_rater(set_: RaterSet, metric, boot: BootstrapSpec | None = None, *,
                label: int | None = None, similarity: bool = False) -> ReliabilityEstimate:
    """Mean pairwise similarity between repeats of the same rater.

    Per (item, rater) the repeat pairs are averaged, raters are averaged
    within an item, then items are averaged.
    """
    boot = boot or BootstrapSpec()
    if not any(len(it.repeats(r)) >= 2 for it in set_.items for r in it.raters):
        raise ValueError("intra-rater undefined: no (item, rater) has two repeats")

    def per_item(it: Item):
        rater_means, n_def, n_undef = [], 0, 0
        for r in it.raters:
            reps = it.repeats(r)
            vals = [_pair_value(metric, it.get(r, ka), it.get(r, kb), label, similarity)
                    for ka, kb in combinations(reps, 2)]
            mean, d, u = _mean_defined(vals)
            n_def, n_undef = n_def + d, n_undef + u
            if mean is not None:
                rater_means.append(mean)
        item_score = math.fsum(rater_means) / len(rater_means) if rater_means else None
        return it.item_id, item_score, n_def, n_undef

    return _estimate(INTRA, set_, metric, boot, per_item)
