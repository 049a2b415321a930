"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 ``evaluate --strict`` with a model
above the band.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .consensus import majority_vote, staple_labels
from .grid import LabelGrid, LgridError, load, save
from .metrics import MetricId, fleiss_kappa, krippendorff_alpha_nominal, metric_id, score
from .pgt import estimate_band, evaluate_models
from .reliability import BootstrapSpec, Item, RaterSet, inter_rater, intra_rater
from .report import (band_dict, curve_csv, dumps, estimate_dict, experiment_dict,
                     report_dict)
from .sim import ExperimentConfig

EXIT_OK, EXIT_INPUT, EXIT_ABOVE = 0, 2, 3
MANIFEST_HEADER = ["item_id", "rater_id", "repeat_index", "role", "path", "model_id"]
ROLES = ("annotation", "model", "truth")
EXTRA_METRICS = ("fleiss_kappa", "krippendorff_alpha")


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


@dataclass
class Manifest:
    rater_set: RaterSet
    models: dict[str, dict[str, LabelGrid]] = field(default_factory=dict)


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open manifest {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise InputError(f"manifest header must be {','.join(MANIFEST_HEADER)}, got {header}")
        rows = list(enumerate(reader, start=2))

    problems = []
    annotations: dict[str, dict] = {}
    truths: dict[str, LabelGrid] = {}
    models: dict[str, dict[str, LabelGrid]] = {}
    seen = {}
    for line, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(MANIFEST_HEADER):
            problems.append(f"row {line}: expected {len(MANIFEST_HEADER)} columns, got {len(row)}")
            continue
        item_id, rater_id, repeat, role, rel, model_id = (c.strip() for c in row)
        if not item_id:
            problems.append(f"row {line}: empty item_id")
            continue
        if role not in ROLES:
            problems.append(f"row {line}: role must be one of {ROLES}, got {role!r}")
            continue
        grid_path = (path.parent / rel) if rel else None
        if grid_path is None or not grid_path.is_file():
            problems.append(f"row {line}: file not found: {rel!r}")
            continue
        try:
            grid = load(grid_path)
        except LgridError as exc:
            problems.append(f"row {line}: cannot parse {rel}: {exc}")
            continue

        if role == "annotation":
            if not rater_id:
                problems.append(f"row {line}: annotation rows need a rater_id")
                continue
            try:
                k = int(repeat or "0")
                if k < 0:
                    raise ValueError
            except ValueError:
                problems.append(f"row {line}: repeat_index must be a non-negative integer, got {repeat!r}")
                continue
            key = (item_id, rater_id, k)
            if key in seen:
                problems.append(f"row {line}: duplicate annotation {key} (first at row {seen[key]})")
                continue
            seen[key] = line
            annotations.setdefault(item_id, {})[(rater_id, k)] = grid
        elif role == "truth":
            if item_id in truths:
                problems.append(f"row {line}: second truth row for item {item_id}")
                continue
            truths[item_id] = grid
        else:
            if not model_id:
                problems.append(f"row {line}: model rows need a model_id")
                continue
            if item_id in models.get(model_id, {}):
                problems.append(f"row {line}: duplicate model row ({model_id}, {item_id})")
                continue
            models.setdefault(model_id, {})[item_id] = grid

    if problems:
        raise InputError("manifest errors:\n  " + "\n  ".join(problems))
    if not annotations:
        raise InputError("manifest has no annotation rows")
    orphans = sorted(set(truths) - set(annotations))
    if orphans:
        raise InputError(f"truth rows for items without annotations: {', '.join(orphans)}")
    try:
        items = tuple(Item(i, annotations[i], truths.get(i)) for i in sorted(annotations))
        return Manifest(RaterSet(items), models)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _emit(obj) -> None:
    sys.stdout.write(dumps(obj) + "\n")


def _boot(args) -> BootstrapSpec:
    try:
        return BootstrapSpec(args.resamples, args.level, args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _load_grid(path) -> LabelGrid:
    try:
        return load(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    except LgridError as exc:
        raise InputError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_metrics(args) -> int:
    a, b = _load_grid(args.a), _load_grid(args.b)
    if a.dims != b.dims:
        raise InputError(f"dimension mismatch: {args.a} has dims {a.dims}, {args.b} has dims {b.dims}")
    names = args.metric or ["dice"]
    out = {}
    va, vb = a.voxels.ravel(), b.voxels.ravel()
    for name in names:
        try:
            if name == "fleiss_kappa":
                cats = np.union1d(va, vb)
                counts = (va[:, None] == cats).astype(int) + (vb[:, None] == cats)
                res = fleiss_kappa(counts, 2)
            elif name == "krippendorff_alpha":
                res = krippendorff_alpha_nominal(np.stack([va, vb], axis=1).tolist())
            else:
                res = score(name, a, b, label=args.label, iou_threshold=args.iou_threshold)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        out[name] = res.value if res.defined else None
    _emit(out)
    return EXIT_OK


def cmd_reliability(args) -> int:
    man = load_manifest(args.manifest)
    boot = _boot(args)
    out = {"version": __version__, "metric": args.metric, "seed": args.seed}
    try:
        if args.kind in ("inter", "both"):
            out["inter"] = estimate_dict(inter_rater(man.rater_set, args.metric, boot,
                                                     label=args.label, repeats=args.repeats))
        if args.kind in ("intra", "both"):
            out["intra"] = estimate_dict(intra_rater(man.rater_set, args.metric, boot, label=args.label))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _emit(out)
    return EXIT_OK


def cmd_band(args) -> int:
    man = load_manifest(args.manifest)
    try:
        band = estimate_band(man.rater_set, args.metric, _boot(args), label=args.label,
                             inter_repeats=args.repeats)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if band.caveat:
        print("warning: inter-rater reliability exceeds intra-rater reliability; "
              "the band is inverted and likely reflects systematic annotation error",
              file=sys.stderr)
    _emit({
        "version": __version__,
        "metric": band.metric.value,
        "seed": args.seed,
        "band": band_dict(band),
        "diagnostics": {"n_undefined_pairs": band.n_undefined_pairs},
    })
    return EXIT_OK


def _safe_name(item_id: str) -> str:
    if not item_id or item_id in (".", "..") or any(c in item_id for c in "/\\\0"):
        raise InputError(f"item id {item_id!r} cannot be used as a file name")
    return item_id


def cmd_consensus(args) -> int:
    man = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = []
    for it in man.rater_set.sorted_items():
        raters = [r for r in it.raters if (r, 0) in it.annotations]
        grids = [it.get(r, 0) for r in raters]
        name = _safe_name(it.item_id) + ".lgrid"
        entry = {"item_id": it.item_id, "file": name, "raters": raters}
        if args.method == "majority":
            fused = majority_vote(grids)
        elif len(grids) < 2:
            raise InputError(f"item {it.item_id}: staple needs at least two raters")
        else:
            try:
                fused, fits = staple_labels(grids, raters, prior=args.prior, tol=args.tol,
                                            max_iter=args.max_iter, init_p=args.init_p,
                                            init_q=args.init_q)
            except ValueError as exc:
                raise InputError(str(exc)) from None
            entry["labels"] = [
                {
                    "label": label,
                    "converged": soft.converged,
                    "n_iter": soft.n_iter,
                    "performance": [{"rater_id": p.rater_id, "p": p.p, "q": p.q} for p in perf],
                }
                for label, (soft, perf) in sorted(fits.items())
            ]
        save(fused, out_dir / name)
        items.append(entry)
    doc = {"version": __version__, "method": args.method, "items": items}
    (out_dir / "consensus.json").write_text(dumps(doc) + "\n")
    _emit(doc)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    man = load_manifest(args.manifest)
    if not man.models:
        raise InputError("manifest has no model rows")
    references = None
    if args.consensus_dir:
        references = {}
        for it in man.rater_set.sorted_items():
            p = Path(args.consensus_dir) / (_safe_name(it.item_id) + ".lgrid")
            if p.is_file():
                references[it.item_id] = _load_grid(p)
    try:
        report = evaluate_models(man.rater_set, man.models, args.metric, _boot(args),
                                 reference_rater=args.reference_rater, references=references,
                                 label=args.label, dataset_id=args.dataset_id)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if report.band.caveat:
        print("warning: inverted band (inter > intra); verdicts are flagged unreliable",
              file=sys.stderr)
    _emit(report_dict(report))
    if args.strict and report.any_above:
        print("strict: at least one model scores above the band", file=sys.stderr)
        return EXIT_ABOVE
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
        cfg = ExperimentConfig.from_dict(raw)
        result = cfg.run(seed=args.seed)
    except OSError as exc:
        raise InputError(f"cannot read config: {exc}") from None
    except (ValueError, TypeError) as exc:
        raise InputError(f"invalid config: {exc}") from None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = experiment_dict(result)
    (out_dir / "result.json").write_text(dumps(doc) + "\n")
    (out_dir / "curve.csv").write_text(curve_csv(result.curve))
    if args.keep_grids:
        grid_dir = out_dir / "grids"
        grid_dir.mkdir(exist_ok=True)
        for name, grid in sorted(result.grids.items()):
            save(grid, grid_dir / f"{name}.lgrid")
    _emit(doc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _metric_arg(value: str) -> str:
    try:
        return metric_id(value).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_bootstrap(p) -> None:
    p.add_argument("--metric", type=_metric_arg, default="dice")
    p.add_argument("--label", type=int, default=None,
                   help="label compared by binary metrics (default: any nonzero label)")
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", choices=("first", "mean"), default="first",
                   help="repeats used for inter-rater pairs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgtband", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", help="compare two LGRID files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--metric", action="append",
                   choices=[m.value for m in MetricId] + list(EXTRA_METRICS))
    p.add_argument("--label", type=int, default=None)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("reliability", help="inter/intra-rater reliability of a manifest")
    p.add_argument("manifest")
    p.add_argument("--kind", choices=("inter", "intra", "both"), default="both")
    _add_bootstrap(p)
    p.set_defaults(func=cmd_reliability)

    p = sub.add_parser("band", help="PGT band of a manifest")
    p.add_argument("manifest")
    _add_bootstrap(p)
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("consensus", help="fuse annotations into consensus grids")
    p.add_argument("manifest")
    p.add_argument("--method", choices=("majority", "staple"), default="majority")
    p.add_argument("--prior", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--init-p", type=float, default=0.9)
    p.add_argument("--init-q", type=float, default=0.9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_consensus)

    p = sub.add_parser("evaluate", help="judge model outputs against the PGT band")
    p.add_argument("manifest")
    _add_bootstrap(p)
    p.add_argument("--reference-rater", default=None)
    p.add_argument("--consensus-dir", default=None,
                   help="directory of <item_id>.lgrid consensus references")
    p.add_argument("--dataset-id", default="dataset")
    p.add_argument("--strict", action="store_true", help="exit 3 if any model is above the band")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="run a simulated PGT experiment from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config's seed")
    p.add_argument("--keep-grids", action="store_true")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
