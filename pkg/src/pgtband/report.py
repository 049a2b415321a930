"""Deterministic JSON/CSV serialization of estimates, bands, reports and experiments.

Floats are written with 17 significant digits and keys keep a fixed
insertion order, so equal results always give byte-identical files.
"""
from __future__ import annotations

import json
import math
from importlib import resources

from . import __version__
from .pgt import PgtBand, PgtReport, Verdict
from .reliability import ReliabilityEstimate


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = "%.17g" % x
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with fixed float formatting; dict order is preserved."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(int(obj))
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        body = ",\n".join(f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}"
                          for k, v in obj.items())
        return "{\n" + body + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        body = ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj)
        return "[\n" + body + "\n" + end + "]"
    if hasattr(obj, "item"):  # numpy scalar
        return dumps(obj.item(), indent, _level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def estimate_dict(est: ReliabilityEstimate) -> dict:
    return {
        "kind": est.kind,
        "metric": est.metric.value,
        "point": est.point,
        "ci_low": est.ci_low,
        "ci_high": est.ci_high,
        "n_items": est.n_items,
        "n_pairs": est.n_pairs,
        "n_undefined": est.n_undefined,
        "seed": est.seed,
    }


def band_dict(band: PgtBand) -> dict:
    return {
        "lower": estimate_dict(band.lower),
        "upper": estimate_dict(band.upper),
        "caveat": band.caveat,
    }


def verdict_dict(v: Verdict | None) -> dict:
    if v is None:
        return {"verdict": None, "margin": None}
    return {"verdict": v.label, "margin": v.margin}


def report_dict(report: PgtReport) -> dict:
    models = []
    for m in report.models:
        models.append({
            "model_id": m.model_id,
            "mean_score": m.mean_score,
            **verdict_dict(m.verdict),
            "band_unreliable": report.band.caveat,
            "per_item": [{"item_id": i, "score": s} for i, s in m.per_item],
        })
    return {
        "version": report.version,
        "dataset_id": report.dataset_id,
        "metric": report.metric.value,
        "seed": report.seed,
        "reference": report.reference,
        "band": band_dict(report.band),
        "models": models,
        "diagnostics": {"n_undefined_pairs": report.band.n_undefined_pairs},
    }


def experiment_dict(result) -> dict:
    t, ref_sim, truth_sim = result.peak
    lo, hi = result.band.edges
    return {
        "version": __version__,
        "metric": result.curve.metric.value,
        "seed": result.phantom.seed,
        "band": band_dict(result.band),
        "peak": {"t": t, "sim_to_reference": ref_sim, "sim_to_truth": truth_sim},
        "contained": result.contained,
        "containment_interval": [lo - result.tol, hi + result.tol],
        "rwmp_proxy": "similarity to the hidden simulated truth",
        "rater_seeds": list(result.rater_seeds),
        "specs": result.specs(),
        "diagnostics": {"n_undefined_pairs": result.band.n_undefined_pairs},
    }


def curve_csv(curve) -> str:
    lines = ["t,sim_to_reference,sim_to_truth"]
    for t, r, g in curve.samples:
        lines.append(f"{_fmt_float(t)},{_fmt_float(r)},{_fmt_float(g)}")
    return "\n".join(lines) + "\n"


def report_schema() -> dict:
    text = resources.files("pgtband").joinpath("report.schema.json").read_text()
    return json.loads(text)
