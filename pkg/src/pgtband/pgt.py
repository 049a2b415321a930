"""Peak Ground Truth band: construction, score verdicts and model reports.

The band runs from inter-rater reliability (lower edge) to intra-rater
reliability (upper edge), always in similarity orientation: distance
metrics enter through 1/(1+d). A model scoring above the upper edge agrees
with the reference more than a rater agrees with themself, which points to
fitting annotation noise rather than real improvement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from . import __version__, _parallel
from .grid import LabelGrid
from .metrics import MetricId, metric_id, score
from .reliability import BootstrapSpec, RaterSet, ReliabilityEstimate, inter_rater, intra_rater

BELOW = "BelowBand"
WITHIN = "WithinBand"
ABOVE = "AboveBand"
_ORDER = {BELOW: 0, WITHIN: 1, ABOVE: 2}


@dataclass(frozen=True)
class PgtBand:
    metric: MetricId
    lower: ReliabilityEstimate
    upper: ReliabilityEstimate

    def __post_init__(self):
        if self.lower.metric != self.upper.metric or metric_id(self.metric) != self.lower.metric:
            raise ValueError("band edges must share the band's metric")

    @property
    def caveat(self) -> bool:
        """Inverted band: inter-rater above intra-rater reliability."""
        return self.lower.point > self.upper.point

    @property
    def edges(self) -> tuple[float, float]:
        return self.lower.point, self.upper.point

    @property
    def n_undefined_pairs(self) -> int:
        return self.lower.n_undefined + self.upper.n_undefined


@dataclass(frozen=True)
class Verdict:
    label: str
    margin: float
    band_unreliable: bool = False

    @property
    def rank(self) -> int:
        """0 below, 1 within, 2 above."""
        return _ORDER[self.label]


def estimate_band(set_: RaterSet, metric, boot: BootstrapSpec | None = None, *,
                  label: int | None = None, inter_repeats: str = "first") -> PgtBand:
    mid = metric_id(metric)
    boot = boot or BootstrapSpec()
    lower = inter_rater(set_, mid, boot, label=label, repeats=inter_repeats, similarity=True)
    upper = intra_rater(set_, mid, boot, label=label, similarity=True)
    return PgtBand(mid, lower, upper)


def classify_score(value: float, band: PgtBand) -> Verdict:
    """Place a similarity-oriented score relative to the band (edges inclusive)."""
    if value is None or not math.isfinite(value):
        raise ValueError(f"score must be a defined finite value, got {value!r}")
    lo, hi = band.edges
    if value < lo:
        return Verdict(BELOW, lo - value, band.caveat)
    if value > hi:
        return Verdict(ABOVE, value - hi, band.caveat)
    return Verdict(WITHIN, min(value - lo, hi - value), band.caveat)


@dataclass(frozen=True)
class ModelResult:
    model_id: str
    mean_score: float | None
    per_item: tuple[tuple[str, float | None], ...]
    verdict: Verdict | None


@dataclass(frozen=True)
class PgtReport:
    dataset_id: str
    metric: MetricId
    band: PgtBand
    models: tuple[ModelResult, ...]
    seed: int
    reference: str
    version: str = __version__

    @property
    def any_above(self) -> bool:
        return any(m.verdict is not None and m.verdict.label == ABOVE for m in self.models)


def default_reference_rater(set_: RaterSet) -> str:
    """Smallest rater id that annotated repeat 0 of every item."""
    common = None
    for it in set_.items:
        have = {r for r, k in it.annotations if k == 0}
        common = have if common is None else common & have
    if not common:
        raise ValueError("no rater annotated repeat 0 of every item; pass a reference rater")
    return min(common)


def evaluate_models(set_: RaterSet, models: Mapping[str, Mapping[str, LabelGrid]], metric,
                    boot: BootstrapSpec | None = None, *, reference_rater: str | None = None,
                    references: Mapping[str, LabelGrid] | None = None,
                    label: int | None = None, dataset_id: str = "dataset",
                    band: PgtBand | None = None) -> PgtReport:
    """Score every model against the reference of each item and judge it against the band.

    References are ``references[item_id]`` when given (e.g. consensus grids),
    otherwise repeat 0 of ``reference_rater``.
    """
    mid = metric_id(metric)
    boot = boot or BootstrapSpec()
    items = set_.sorted_items()
    item_ids = [it.item_id for it in items]

    if references is not None:
        missing = [i for i in item_ids if i not in references]
        if missing:
            raise ValueError(f"missing reference grids for items: {', '.join(missing)}")
        refs = {i: references[i] for i in item_ids}
        ref_name = "consensus"
    else:
        rater = reference_rater or default_reference_rater(set_)
        missing = [it.item_id for it in items if (rater, 0) not in it.annotations]
        if missing:
            raise ValueError(f"reference rater {rater} lacks repeat 0 for items: {', '.join(missing)}")
        refs = {it.item_id: it.get(rater, 0) for it in items}
        ref_name = f"rater:{rater}"

    for model_id in sorted(models):
        missing = [i for i in item_ids if i not in models[model_id]]
        if missing:
            raise ValueError(f"model {model_id} is missing items: {', '.join(missing)}")

    if band is None:
        band = estimate_band(set_, mid, boot, label=label)

    def item_score(args):
        model_id, item_id = args
        res = score(mid, models[model_id][item_id], refs[item_id], label=label)
        return res.similarity() if res.defined else None

    jobs = [(m, i) for m in sorted(models) for i in item_ids]
    values = dict(zip(jobs, _parallel.ordered_map(item_score, jobs)))

    results = []
    for model_id in sorted(models):
        per_item = tuple((i, values[(model_id, i)]) for i in item_ids)
        defined = [v for _, v in per_item if v is not None]
        mean = math.fsum(defined) / len(defined) if defined else None
        verdict = classify_score(mean, band) if mean is not None else None
        results.append(ModelResult(model_id, mean, per_item, verdict))
    return PgtReport(dataset_id, mid, band, tuple(results), boot.seed, ref_name)
