"""Similarity and agreement metrics between two annotations.

Overlap metrics (dice, jaccard), categorical agreement (voxel agreement,
Cohen/Fleiss kappa, Krippendorff alpha), boundary distances (Hausdorff,
HD95, ASSD), instance matching with panoptic quality, and weighted compound
scores. ``score`` is the registry entry point used by the reliability, band
and simulation code: it evaluates any named metric on a pair of label grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage, optimize

from .grid import BinaryMask, InstanceMap, LabelGrid, binarize, check_same_dims, foreground


class MetricId(str, Enum):
    DICE = "dice"
    JACCARD = "jaccard"
    VOXEL_AGREEMENT = "voxel_agreement"
    HAUSDORFF = "hausdorff"
    HD95 = "hd95"
    ASSD = "assd"
    MEAN_LABEL_DICE = "mean_label_dice"
    COHEN_KAPPA = "cohen_kappa"
    PANOPTIC_QUALITY = "panoptic_quality"

    @property
    def higher_is_better(self) -> bool:
        return self not in DISTANCE_METRICS

    def __str__(self):
        return self.value


DISTANCE_METRICS = frozenset({MetricId.HAUSDORFF, MetricId.HD95, MetricId.ASSD})


def metric_id(name) -> MetricId:
    try:
        return MetricId(str(name))
    except ValueError:
        known = ", ".join(m.value for m in MetricId)
        raise ValueError(f"unknown metric {name!r}; expected one of {known}") from None


@dataclass(frozen=True)
class MetricResult:
    metric: str
    value: float | None
    defined: bool = True
    reason: str | None = None

    @classmethod
    def undefined(cls, metric, reason: str) -> "MetricResult":
        return cls(str(metric), None, False, reason)

    def similarity(self) -> float:
        """Value in higher-is-better orientation; distances map to 1/(1+d)."""
        if not self.defined:
            raise ValueError(f"{self.metric} is undefined: {self.reason}")
        if self.metric in {m.value for m in DISTANCE_METRICS}:
            return 1.0 / (1.0 + self.value)
        return self.value


# ---------------------------------------------------------------------------
# contingency / overlap


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """``counts[i, j]`` = voxels with a == labels[i] and b == labels[j]."""

    labels: np.ndarray
    counts: np.ndarray

    def count(self, la: int, lb: int) -> int:
        ia = np.searchsorted(self.labels, la)
        ib = np.searchsorted(self.labels, lb)
        if ia >= len(self.labels) or ib >= len(self.labels):
            return 0
        if self.labels[ia] != la or self.labels[ib] != lb:
            return 0
        return int(self.counts[ia, ib])

    def as_dict(self) -> dict[tuple[int, int], int]:
        rows, cols = np.nonzero(self.counts)
        return {
            (int(self.labels[i]), int(self.labels[j])): int(self.counts[i, j])
            for i, j in zip(rows, cols)
        }

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _contingency_arrays(a: np.ndarray, b: np.ndarray) -> ContingencyTable:
    a = a.ravel().astype(np.int64)
    b = b.ravel().astype(np.int64)
    labels = np.union1d(a, b)
    ia = np.searchsorted(labels, a)
    ib = np.searchsorted(labels, b)
    k = len(labels)
    counts = np.bincount(ia * k + ib, minlength=k * k).reshape(k, k)
    return ContingencyTable(labels, counts)


def contingency(a: LabelGrid, b: LabelGrid) -> ContingencyTable:
    check_same_dims(a, b)
    return _contingency_arrays(a.voxels, b.voxels)


def _overlap_counts(a: BinaryMask, b: BinaryMask) -> tuple[int, int, int]:
    check_same_dims(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    return inter, a.count, b.count


def dice(a: BinaryMask, b: BinaryMask) -> MetricResult:
    inter, na, nb = _overlap_counts(a, b)
    if na + nb == 0:
        return MetricResult("dice", 1.0)
    return MetricResult("dice", 2.0 * inter / (na + nb))


def jaccard(a: BinaryMask, b: BinaryMask) -> MetricResult:
    inter, na, nb = _overlap_counts(a, b)
    union = na + nb - inter
    if union == 0:
        return MetricResult("jaccard", 1.0)
    return MetricResult("jaccard", inter / union)


def voxel_agreement(a: LabelGrid, b: LabelGrid) -> MetricResult:
    check_same_dims(a, b)
    return MetricResult("voxel_agreement", float(np.mean(a.voxels == b.voxels)))


def mean_label_dice(a: LabelGrid, b: LabelGrid) -> MetricResult:
    """Unweighted mean Dice over every nonzero label present in either grid."""
    table = contingency(a, b)
    keep = table.labels != 0
    if not keep.any():
        return MetricResult.undefined("mean_label_dice", "no nonzero labels in either grid")
    inter = np.diag(table.counts)[keep]
    size_a = table.counts.sum(axis=1)[keep]
    size_b = table.counts.sum(axis=0)[keep]
    return MetricResult("mean_label_dice", float(np.mean(2.0 * inter / (size_a + size_b))))


# ---------------------------------------------------------------------------
# chance-corrected agreement


def cohen_kappa(a: Sequence, b: Sequence) -> MetricResult:
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("cohen_kappa needs at least one rating pair")
    cats, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    ia, ib = inv[: a.size], inv[a.size :]
    n = a.size
    p_o = np.count_nonzero(ia == ib) / n
    pa = np.bincount(ia, minlength=len(cats)) / n
    pb = np.bincount(ib, minlength=len(cats)) / n
    p_e = float(np.dot(pa, pb))
    if p_e == 1.0:
        if p_o == 1.0:
            return MetricResult("cohen_kappa", 1.0)
        return MetricResult.undefined("cohen_kappa", "expected agreement is 1")
    return MetricResult("cohen_kappa", (p_o - p_e) / (1.0 - p_e))


def fleiss_kappa(ratings, raters_per_item: int) -> MetricResult:
    """Fleiss' kappa from an item x category count matrix."""
    counts = np.asarray(ratings, dtype=np.int64)
    if counts.ndim != 2 or counts.shape[0] < 1:
        raise ValueError("ratings must be a non-empty item x category matrix")
    n = int(raters_per_item)
    if n < 2:
        raise ValueError("fleiss_kappa needs at least 2 raters per item")
    if (counts < 0).any():
        raise ValueError("category counts must be non-negative")
    bad = np.nonzero(counts.sum(axis=1) != n)[0]
    if bad.size:
        raise ValueError(f"row sums differ from {n} raters at items {bad.tolist()}")
    n_items = counts.shape[0]
    per_item = (np.sum(counts * counts, axis=1) - n) / (n * (n - 1))
    p_bar = float(per_item.mean())
    p_cat = counts.sum(axis=0) / (n_items * n)
    p_e = float(np.sum(p_cat * p_cat))
    if p_e == 1.0:
        return MetricResult.undefined("fleiss_kappa", "expected agreement is 1")
    return MetricResult("fleiss_kappa", (p_bar - p_e) / (1.0 - p_e))


def _is_missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def krippendorff_alpha_nominal(ratings) -> MetricResult:
    """Nominal Krippendorff alpha; ``ratings[item][rater]``, None/NaN = missing."""
    units = []
    for row in ratings:
        vals = [v for v in row if not _is_missing(v)]
        if len(vals) >= 2:
            units.append(vals)
    if not units:
        return MetricResult.undefined("krippendorff_alpha", "no pairable values")
    cats = sorted({v for u in units for v in u})
    index = {c: i for i, c in enumerate(cats)}
    k = len(cats)
    coincidence = np.zeros((k, k))
    for vals in units:
        m = len(vals)
        hist = np.bincount([index[v] for v in vals], minlength=k).astype(float)
        # ordered pairs of distinct ratings within the unit
        coincidence += (np.outer(hist, hist) - np.diag(hist)) / (m - 1)
    n_c = coincidence.sum(axis=1)
    n = n_c.sum()
    disagree = coincidence.sum() - np.trace(coincidence)
    expected = n * n - np.sum(n_c * n_c)
    if expected == 0:
        return MetricResult.undefined("krippendorff_alpha", "expected disagreement is 0")
    return MetricResult("krippendorff_alpha", 1.0 - (n - 1) * disagree / expected)


# ---------------------------------------------------------------------------
# boundary distances


def boundary(mask: BinaryMask) -> np.ndarray:
    """Foreground voxels with a face neighbour in background or off the grid."""
    bits = mask.bits
    struct = ndimage.generate_binary_structure(bits.ndim, 1)
    inner = ndimage.binary_erosion(bits, structure=struct, border_value=0)
    return bits & ~inner


def _directed(src: np.ndarray, dst: np.ndarray, spacing) -> np.ndarray:
    if not (~dst).any():
        return np.zeros(np.count_nonzero(src))
    dist = ndimage.distance_transform_edt(~dst, sampling=spacing)
    return dist[src]


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile, ``q`` in (0, 1]."""
    ordered = np.sort(values)
    rank = max(1, math.ceil(q * len(ordered)))
    return float(ordered[rank - 1])


def surface_distances(a: BinaryMask, b: BinaryMask) -> dict[str, MetricResult]:
    check_same_dims(a, b)
    if a.spacing != b.spacing:
        raise ValueError(f"spacing mismatch: {a.spacing} vs {b.spacing}")
    names = ("hausdorff", "hd95", "assd")
    if a.count == 0 or b.count == 0:
        return {n: MetricResult.undefined(n, "undefined for empty surface") for n in names}
    ba, bb = boundary(a), boundary(b)
    pool = np.concatenate([_directed(ba, bb, a.spacing), _directed(bb, ba, a.spacing)])
    return {
        "hausdorff": MetricResult("hausdorff", float(pool.max())),
        "hd95": MetricResult("hd95", nearest_rank(pool, 0.95)),
        "assd": MetricResult("assd", float(pool.mean())),
    }


# ---------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_a: tuple[int, ...]
    unmatched_b: tuple[int, ...]
    iou_threshold: float

    @property
    def total_iou(self) -> float:
        return math.fsum(p[2] for p in self.pairs)


def iou_table(a: InstanceMap, b: InstanceMap) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Instance ids of a, of b, and the IoU matrix between them."""
    table = contingency(a, b)
    labels = table.labels
    size_a = table.counts.sum(axis=1)
    size_b = table.counts.sum(axis=0)
    rows = np.nonzero((labels != 0) & (size_a > 0))[0]
    cols = np.nonzero((labels != 0) & (size_b > 0))[0]
    inter = table.counts[np.ix_(rows, cols)].astype(float)
    union = size_a[rows][:, None] + size_b[cols][None, :] - inter
    iou = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    return labels[rows].astype(int), labels[cols].astype(int), iou


def _best_total(weights: np.ndarray) -> float:
    if weights.size == 0:
        return 0.0
    r, c = optimize.linear_sum_assignment(weights, maximize=True)
    return math.fsum(weights[r, c])


def match_instances(a: InstanceMap, b: InstanceMap, iou_threshold: float = 0.5) -> Matching:
    """Maximum-total-IoU one-to-one matching among pairs with IoU >= threshold.

    Ties between optimal matchings resolve to the lexicographically smallest
    sorted (a_id, b_id) pair list: candidate pairs are visited in order and
    kept whenever an optimal matching containing them still exists.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    ids_a, ids_b, iou = iou_table(a, b)
    w = np.where(iou >= iou_threshold, iou, 0.0)
    best = _best_total(w)
    eps = 1e-9 * max(1.0, best)

    pairs = []
    if iou_threshold > 0.5:
        # IoU > 0.5 pairs are mutually exclusive, so the matching is unique
        for i, j in zip(*np.nonzero(w)):
            pairs.append((int(ids_a[i]), int(ids_b[j]), float(iou[i, j])))
    else:
        live = w.copy()
        for i, j in zip(*np.nonzero(w)):
            if live[i, j] == 0.0:
                continue
            forced = live.copy()
            forced[i, :] = 0.0
            forced[:, j] = 0.0
            rest = _best_total(forced)
            if live[i, j] + rest >= best - eps:
                pairs.append((int(ids_a[i]), int(ids_b[j]), float(iou[i, j])))
                best -= live[i, j]
                live = forced
            else:
                live[i, j] = 0.0
    pairs.sort()
    used_a = {p[0] for p in pairs}
    used_b = {p[1] for p in pairs}
    return Matching(
        tuple(pairs),
        tuple(int(x) for x in ids_a if x not in used_a),
        tuple(int(x) for x in ids_b if x not in used_b),
        float(iou_threshold),
    )


def panoptic_quality(m: Matching, a: InstanceMap | None = None, b: InstanceMap | None = None) -> dict[str, MetricResult]:
    """PQ/SQ/RQ from a matching; the maps only serve as a dims check."""
    if a is not None and b is not None:
        check_same_dims(a, b)
    tp, fp, fn = len(m.pairs), len(m.unmatched_b), len(m.unmatched_a)
    if tp + fp + fn == 0:
        return {
            n: MetricResult.undefined(n, "no instances in either map")
            for n in ("pq", "sq", "rq")
        }
    rq = tp / (tp + 0.5 * fp + 0.5 * fn)
    if tp == 0:
        return {
            "pq": MetricResult("pq", 0.0),
            "sq": MetricResult.undefined("sq", "no matched instances"),
            "rq": MetricResult("rq", 0.0),
        }
    sq = m.total_iou / tp
    return {
        "pq": MetricResult("pq", sq * rq),
        "sq": MetricResult("sq", sq),
        "rq": MetricResult("rq", rq),
    }


# ---------------------------------------------------------------------------
# compound scores


@dataclass(frozen=True)
class CompoundSpec:
    components: tuple[tuple[MetricId, float], ...]

    def __post_init__(self):
        comps = tuple((metric_id(m), float(w)) for m, w in self.components)
        if not comps:
            raise ValueError("a compound score needs at least one component")
        if any(w < 0 for _, w in comps):
            raise ValueError("component weights must be non-negative")
        total = math.fsum(w for _, w in comps)
        if total <= 0:
            raise ValueError("component weights must not all be zero")
        object.__setattr__(self, "components", tuple((m, w / total) for m, w in comps))


def compound_score(results: Iterable[MetricResult], spec: CompoundSpec) -> MetricResult:
    by_name = {r.metric: r for r in results}
    terms = []
    for metric, weight in spec.components:
        r = by_name.get(metric.value)
        if r is None:
            raise ValueError(f"missing component {metric.value}")
        if not r.defined:
            raise ValueError(f"component {metric.value} is undefined: {r.reason}")
        terms.append(weight * r.similarity())
    return MetricResult("compound", math.fsum(terms))


# ---------------------------------------------------------------------------
# registry


def _mask(grid: LabelGrid, label: int | None) -> BinaryMask:
    return foreground(grid) if label is None else binarize(grid, label)


def score(metric, a: LabelGrid, b: LabelGrid, label: int | None = None,
          iou_threshold: float = 0.5) -> MetricResult:
    """Evaluate ``metric`` on two label grids.

    Binary metrics compare ``label`` (or, with ``label=None``, every nonzero
    label as foreground).
    """
    mid = metric_id(metric)
    check_same_dims(a, b)
    if mid is MetricId.DICE:
        return dice(_mask(a, label), _mask(b, label))
    if mid is MetricId.JACCARD:
        return jaccard(_mask(a, label), _mask(b, label))
    if mid in DISTANCE_METRICS:
        return surface_distances(_mask(a, label), _mask(b, label))[mid.value]
    if mid is MetricId.VOXEL_AGREEMENT:
        return voxel_agreement(a, b)
    if mid is MetricId.MEAN_LABEL_DICE:
        return mean_label_dice(a, b)
    if mid is MetricId.COHEN_KAPPA:
        return cohen_kappa(a.voxels, b.voxels)
    if mid is MetricId.PANOPTIC_QUALITY:
        pq = panoptic_quality(match_instances(a, b, iou_threshold), a, b)["pq"]
        return MetricResult("panoptic_quality", pq.value, pq.defined, pq.reason)
    raise AssertionError(mid)
