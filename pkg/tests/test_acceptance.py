"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed even
without ``-s``) or directly with ``python tests/test_acceptance.py``.
"""
import contextlib
import io
import json
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))
import oracles  # noqa: E402

from pgtband.cli import main  # noqa: E402
from pgtband.consensus import staple_fuse, threshold_soft  # noqa: E402
from pgtband.grid import BinaryMask, LabelGrid, read_lgrid, save, write_lgrid  # noqa: E402
from pgtband.metrics import (cohen_kappa, dice, fleiss_kappa, jaccard,  # noqa: E402
                             krippendorff_alpha_nominal, match_instances, mean_label_dice,
                             surface_distances, voxel_agreement)
from pgtband.pgt import estimate_band  # noqa: E402
from pgtband.reliability import BootstrapSpec, Item, RaterSet  # noqa: E402
from pgtband.sim import (ExperimentConfig, PhantomSpec, RaterNoiseModel,  # noqa: E402
                         generate_phantom, simulate_binary_rater, simulate_rater)


def _line(n, ok, detail):
    return f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}  {detail}"


# --- 1. metric oracles --------------------------------------------------------------

def criterion_1():
    rng = np.random.default_rng(1001)
    worst, elapsed, count = 0.0, 0.0, 0

    def check(got, expected):
        nonlocal worst
        if expected is None:
            assert not got.defined
        else:
            worst = max(worst, abs(got.value - expected))

    for _ in range(1000):
        shape = tuple(int(s) for s in rng.integers(1, 9, size=2))
        k = int(rng.integers(2, 5))
        a = rng.integers(0, k, size=shape)
        b = np.where(rng.random(shape) < 0.6, a, rng.integers(0, k, size=shape))
        ga, gb = LabelGrid(a), LabelGrid(b)
        ma, mb = BinaryMask(a > 0), BinaryMask(b > 0)
        la, lb = a.ravel().tolist(), b.ravel().tolist()
        n = int(rng.integers(1, 51))
        seq_a, seq_b = la[:n] or [0], lb[:n] or [0]
        raters = int(rng.integers(2, 6))
        units = int(rng.integers(1, 20))
        cats = int(rng.integers(2, 5))
        votes = rng.integers(0, cats, size=(units, raters))
        counts = [[int((row == c).sum()) for c in range(cats)] for row in votes]
        ratings = [[None if rng.random() < 0.2 else int(v) for v in row] for row in votes]

        t0 = time.perf_counter()
        got = [dice(ma, mb), jaccard(ma, mb), voxel_agreement(ga, gb), mean_label_dice(ga, gb),
               cohen_kappa(seq_a, seq_b), fleiss_kappa(counts, raters),
               krippendorff_alpha_nominal(ratings)]
        elapsed += time.perf_counter() - t0

        bits_a, bits_b = (a > 0).astype(int).tolist(), (b > 0).astype(int).tolist()
        expected = [oracles.dice(bits_a, bits_b), oracles.jaccard(bits_a, bits_b),
                    oracles.voxel_agreement(a.tolist(), b.tolist()),
                    oracles.mean_label_dice(a.tolist(), b.tolist()),
                    oracles.cohen_kappa(seq_a, seq_b), oracles.fleiss_kappa(counts, raters),
                    oracles.krippendorff_nominal(ratings)]
        for g, e in zip(got, expected):
            check(g, e)
            count += 1
    ok = worst <= 1e-12 and elapsed < 10
    return ok, f"metric oracles: {count} comparisons, max |err| {worst:.1e}, {elapsed:.2f}s"


# --- 2. surface distances -----------------------------------------------------------

def criterion_2():
    rng = np.random.default_rng(2002)
    worst, elapsed, done = 0.0, 0.0, 0
    while done < 500:
        shape = tuple(int(s) for s in rng.integers(2, 17, size=2))
        spacing = tuple(float(s) for s in rng.choice([0.5, 1.0, 1.5, 2.0], size=2))
        a = rng.random(shape) < rng.uniform(0.1, 0.7)
        b = rng.random(shape) < rng.uniform(0.1, 0.7)
        if not a.any() or not b.any():
            continue
        t0 = time.perf_counter()
        got = surface_distances(BinaryMask(a, spacing), BinaryMask(b, spacing))
        elapsed += time.perf_counter() - t0
        exp = oracles.surface_distances(a.astype(int).tolist(), b.astype(int).tolist(), spacing)
        for k in ("hausdorff", "hd95", "assd"):
            worst = max(worst, abs(got[k].value - exp[k]))
        done += 1
    ok = worst <= 1e-9 and elapsed < 30
    return ok, f"surface distances: {done} pairs, max |err| {worst:.1e}, {elapsed:.2f}s"


# --- 3. instance matching -----------------------------------------------------------

def _instance_map(rng, shape, n):
    vox = np.zeros(shape, dtype=int)
    for label in rng.choice(np.arange(1, 30), size=n, replace=False):
        r0, c0 = rng.integers(0, shape[0]), rng.integers(0, shape[1])
        h, w = rng.integers(1, 5), rng.integers(1, 5)
        vox[r0:r0 + h, c0:c0 + w] = label
    return LabelGrid(vox, max_label=29)


def criterion_3():
    rng = np.random.default_rng(3003)
    mismatches = 0
    for _ in range(200):
        a = _instance_map(rng, (10, 10), int(rng.integers(0, 7)))
        b = _instance_map(rng, (10, 10), int(rng.integers(0, 7)))
        thr = float(rng.choice([0.05, 0.2, 0.5, 0.7]))
        exp_total, _ = oracles.best_matching(a.voxels.tolist(), b.voxels.tolist(), thr)
        _, _, table = oracles.ious(a.voxels.tolist(), b.voxels.tolist())
        m = match_instances(a, b, thr)
        total = sum((table[(x, y)] for x, y, _ in m.pairs), Fraction(0))
        mismatches += total != exp_total
    return mismatches == 0, f"instance matching: 200 cases, {mismatches} differ from exhaustive optimum"


# --- 4. STAPLE recovery -------------------------------------------------------------

def criterion_4():
    t0 = time.perf_counter()
    err_p, err_q, monotone, fracs = [], [], True, []
    for seed in range(20):
        truth = generate_phantom(PhantomSpec((64, 64), 5, (8, 12), 2, seed=seed))
        mask = BinaryMask(truth.voxels > 0)
        fracs.append(mask.count / truth.size)
        masks = [simulate_binary_rater(mask, 0.90, 0.95, 1000 * seed + j) for j in range(5)]
        soft, perf = staple_fuse(masks)
        obj = np.diff(soft.objective)
        monotone &= bool(np.all(obj >= -1e-9 * np.abs(np.array(soft.objective[:-1]))))
        err_p += [abs(r.p - 0.90) for r in perf]
        err_q += [abs(r.q - 0.95) for r in perf]
    elapsed = time.perf_counter() - t0
    mae_p, mae_q = float(np.mean(err_p)), float(np.mean(err_q))
    ok = mae_p <= 0.03 and mae_q <= 0.03 and monotone and elapsed < 20
    return ok, (f"STAPLE recovery: MAE p {mae_p:.4f}, q {mae_q:.4f}, objective monotone {monotone}, "
                f"foreground {np.mean(fracs):.2f}, {elapsed:.2f}s")


# --- 5. consensus benefit -----------------------------------------------------------

def criterion_5():
    noise = RaterNoiseModel()
    wins = 0
    for seed in range(100):
        truth = generate_phantom(PhantomSpec(seed=seed))
        fg = BinaryMask(truth.voxels > 0)
        masks = [BinaryMask(simulate_rater(truth, noise, 7919 * seed + r).voxels > 0)
                 for r in range(5)]
        fused = threshold_soft(staple_fuse(masks)[0])
        individual = np.mean([dice(m, fg).value for m in masks])
        wins += dice(fused, fg).value >= individual
    return wins >= 95, f"consensus benefit: STAPLE >= mean rater Dice in {wins}/100 seeds"


# --- 6. bounds ordering -------------------------------------------------------------

def criterion_6():
    noise = RaterNoiseModel(flip_prob=0.05, repeat_flip_prob=0.02)
    boot = BootstrapSpec(100, 0.95, 0)
    ordered = 0
    for seed in range(100):
        truth = generate_phantom(PhantomSpec(seed=seed))
        ann = {(f"r{r}", k): simulate_rater(truth, noise, 7919 * seed + r, k)
               for r in range(5) for k in range(2)}
        band = estimate_band(RaterSet((Item("phantom", ann),)), "dice", boot)
        ordered += band.upper.point >= band.lower.point
    return ordered >= 95, f"bounds ordering: intra >= inter in {ordered}/100 seeds"


# --- 7. PGT curve -------------------------------------------------------------------

def criterion_7():
    t0 = time.perf_counter()
    cfg = ExperimentConfig()
    early = contained = 0
    for seed in range(50):
        res = cfg.run(seed=seed)
        early += res.peak[0] < 1
        contained += res.contained
    elapsed = time.perf_counter() - t0
    ok = early >= 48 and contained >= 45 and elapsed < 180
    return ok, (f"PGT curve: peak at t<1 in {early}/50, peak inside band +-0.05 in {contained}/50, "
                f"{elapsed:.1f}s")


# --- 8. band shift under consensus --------------------------------------------------

def criterion_8():
    diffs = []
    for seed in range(50):
        single = ExperimentConfig(reference="rater").run(seed=seed)
        fused = ExperimentConfig(reference="staple").run(seed=seed)
        diffs.append(fused.peak[1] - single.peak[1])
    mean = float(np.mean(diffs))
    return mean >= 0, f"consensus shift: mean peak ref-sim gain {mean:+.4f} over 50 paired seeds"


# --- 9. CLI determinism -------------------------------------------------------------

def _invoke(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue()


def _tree(d: Path):
    if not d.exists():
        return {}
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def criterion_9():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        truth = generate_phantom(PhantomSpec((48, 48), 3, (5, 9), 1, seed=11))
        noise = RaterNoiseModel()
        rows = ["item_id,rater_id,repeat_index,role,path,model_id"]
        for item in ("a", "b"):
            for r in range(3):
                for k in range(2):
                    name = f"{item}_{r}_{k}.lgrid"
                    save(simulate_rater(truth, noise, 100 * r + ord(item), k), root / name)
                    rows.append(f"{item},r{r},{k},annotation,{name},")
            save(truth, root / f"model_{item}.lgrid")
            rows.append(f"{item},,,model,model_{item}.lgrid,m1")
        (root / "manifest.csv").write_text("\n".join(rows) + "\n")
        (root / "cfg.json").write_text(json.dumps({"seed": 5, "phantom": {"dims": [48, 48], "n_blobs": 3,
                                                                         "blob_radius_range": [5, 9]}}))
        m = root / "manifest.csv"
        commands = {
            "metrics": ["metrics", root / "a_0_0.lgrid", root / "a_1_0.lgrid", "--metric", "dice",
                        "--metric", "hd95", "--metric", "panoptic_quality", "--metric", "fleiss_kappa"],
            "reliability": ["reliability", m, "--resamples", 300, "--seed", 7],
            "band": ["band", m, "--resamples", 300, "--seed", 7],
            "consensus": ["consensus", m, "--method", "staple", "--out", "{out}"],
            "evaluate": ["evaluate", m, "--resamples", 300, "--seed", 7],
            "simulate": ["simulate", root / "cfg.json", "--out", "{out}", "--keep-grids", "--seed", 5],
        }
        differing = []
        for name, argv in commands.items():
            runs = []
            for rep in range(2):
                out_dir = root / f"{name}_{rep}"
                code, out = _invoke([str(a).replace("{out}", str(out_dir)) for a in argv])
                runs.append((code, out, sorted(_tree(out_dir).items())))
            if runs[0] != runs[1] or runs[0][0] != 0:
                differing.append(name)
    return not differing, (f"CLI determinism: {len(commands)} subcommands, "
                           f"differing: {', '.join(differing) or 'none'}")


# --- 10. format round-trip ----------------------------------------------------------

def criterion_10():
    rng = np.random.default_rng(1010)
    bad = 0
    for _ in range(1000):
        ndim = int(rng.integers(2, 4))
        shape = tuple(int(s) for s in rng.integers(1, 9, size=ndim))
        top = int(rng.choice([1, 7, 255, 65535]))
        vox = rng.integers(0, top + 1, size=shape)
        spacing = tuple(float(s) for s in rng.uniform(0.05, 5, size=ndim)) if rng.random() < 0.5 else ()
        g = LabelGrid(vox, spacing, min(65535, int(vox.max()) + int(rng.integers(0, 3))))
        data = write_lgrid(g)
        back = read_lgrid(data)
        bad += not (back == g and write_lgrid(back) == data
                    and np.array_equal(back.voxels, g.voxels) and back.spacing == g.spacing)
    return bad == 0, f"LGRID round trip: 1000 grids, {bad} mismatches"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("n", range(1, len(CRITERIA) + 1))
def test_acceptance(n, capsys):
    ok, detail = CRITERIA[n - 1]()
    with capsys.disabled():
        print("\n" + _line(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for i, fn in enumerate(CRITERIA, start=1):
        ok, detail = fn()
        print(_line(i, ok, detail), flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
