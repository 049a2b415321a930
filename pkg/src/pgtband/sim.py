"""Synthetic truth, noisy raters and model trajectories that trace a PGT curve.

The hidden truth is a blob phantom. Raters perturb it with a systematic
shift, per-instance boundary jitter and i.i.d. voxel flips; repeated
annotations of one rater re-flip that rater's own base annotation with a
smaller probability. A model trajectory first learns the voxels on which
truth and reference agree and, once those are learnt (``t_signal``),
starts copying the reference on the voxels where the reference is wrong.
Similarity to the reference then keeps rising while similarity to the
truth (the stand-in for real-world performance) peaks and falls.

All randomness comes from streams keyed by (purpose, seed, index), so
results do not depend on evaluation order.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .consensus import majority_vote, staple_labels
from .grid import BinaryMask, LabelGrid, check_same_dims
from .metrics import MetricId, metric_id, score
from .pgt import PgtBand, estimate_band
from .reliability import BootstrapSpec, Item, RaterSet

FG_BOUNDS = (0.05, 0.6)
MAX_RETRIES = 10


def rng_for(purpose: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng([zlib.crc32(purpose.encode()), *(int(k) for k in keys)])


def derive_seed(purpose: str, *keys: int) -> int:
    return int(rng_for(purpose, *keys).integers(0, 2**31 - 1))


# ---------------------------------------------------------------------------
# phantoms


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, ...] = (128, 128)
    n_blobs: int = 6
    blob_radius_range: tuple[float, float] = (10.0, 20.0)
    smoothing: int = 2
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        lo, hi = (float(r) for r in self.blob_radius_range)
        if len(dims) not in (2, 3) or min(dims) < 1:
            raise ValueError(f"phantom dims must be 2D/3D positive extents, got {dims}")
        if self.n_blobs < 1:
            raise ValueError("n_blobs must be >= 1")
        if not 0 < lo <= hi:
            raise ValueError(f"invalid blob radius range {(lo, hi)}")
        if 2 * math.ceil(hi) + 1 > min(dims):
            raise ValueError(f"blobs of radius {hi} do not fit in {dims}")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "blob_radius_range", (lo, hi))


def _paint_blobs(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    grid = np.indices(spec.dims)
    stack = np.empty((spec.n_blobs, *spec.dims))
    for b in range(spec.n_blobs):
        r = rng.uniform(*spec.blob_radius_range)
        m = math.ceil(r)
        center = [rng.integers(m, d - m) for d in spec.dims]
        dist2 = sum((grid[ax] - c) ** 2 for ax, c in enumerate(center))
        stack[b] = dist2 <= r * r
    for _ in range(spec.smoothing):
        for b in range(spec.n_blobs):
            stack[b] = ndimage.uniform_filter(stack[b], size=3, mode="constant")
    top = stack.max(axis=0)
    labels = np.argmax(stack, axis=0) + 1
    return np.where(top >= 0.5, labels, 0)


def generate_phantom(spec: PhantomSpec) -> LabelGrid:
    """Blob instances 1..n_blobs on background 0.

    Retries with perturbed streams when a blob vanishes or the foreground
    fraction leaves [0.05, 0.6].
    """
    for attempt in range(MAX_RETRIES + 1):
        labels = _paint_blobs(spec, rng_for("phantom", spec.seed, attempt))
        frac = np.count_nonzero(labels) / labels.size
        present = np.unique(labels[labels > 0])
        if FG_BOUNDS[0] <= frac <= FG_BOUNDS[1] and len(present) == spec.n_blobs:
            return LabelGrid(labels, max_label=spec.n_blobs)
    raise ValueError(
        f"phantom infeasible after {MAX_RETRIES} retries: foreground fraction must lie in "
        f"{FG_BOUNDS} with all {spec.n_blobs} blobs visible"
    )


# ---------------------------------------------------------------------------
# raters


@dataclass(frozen=True)
class RaterNoiseModel:
    flip_prob: float = 0.05
    boundary_jitter: int = 0
    bias: tuple[int, ...] = ()
    repeat_flip_prob: float = 0.02

    def __post_init__(self):
        for name in ("flip_prob", "repeat_flip_prob"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.boundary_jitter < 0:
            raise ValueError("boundary_jitter must be >= 0")
        object.__setattr__(self, "bias", tuple(int(b) for b in self.bias))

    @property
    def nested(self) -> bool:
        """Repeat noise not above between-rater noise (intra >= inter expected)."""
        return self.repeat_flip_prob <= self.flip_prob


def _shift(labels: np.ndarray, offset: Sequence[int]) -> np.ndarray:
    if not any(offset):
        return labels
    out = np.zeros_like(labels)
    src, dst = [], []
    for o, n in zip(offset, labels.shape):
        if abs(o) >= n:
            return out
        src.append(slice(max(0, -o), n - max(0, o)))
        dst.append(slice(max(0, o), n - max(0, -o)))
    out[tuple(dst)] = labels[tuple(src)]
    return out


def _jitter(labels: np.ndarray, radius: int, rng: np.random.Generator) -> np.ndarray:
    out = labels.copy()
    struct = ndimage.generate_binary_structure(labels.ndim, 1)
    for inst in np.unique(labels[labels > 0]):
        r = int(rng.integers(0, radius + 1))
        grow = rng.random() < 0.5
        if r == 0:
            continue
        mask = out == inst
        if grow:
            out[ndimage.binary_dilation(mask, struct, iterations=r) & (out == 0)] = inst
        else:
            out[mask & ~ndimage.binary_erosion(mask, struct, iterations=r, border_value=0)] = 0
    return out


def _flip(labels: np.ndarray, prob: float, rng: np.random.Generator) -> np.ndarray:
    """Flip voxels between foreground and background with probability ``prob``.

    Background voxels that flip take the label of the nearest instance.
    """
    flips = rng.random(labels.shape) < prob
    if not flips.any():
        return labels
    fg = labels > 0
    if fg.any():
        idx = ndimage.distance_transform_edt(~fg, return_distances=False, return_indices=True)
        nearest = labels[tuple(idx)]
    else:
        nearest = np.ones_like(labels)
    out = labels.copy()
    out[flips & fg] = 0
    out[flips & ~fg] = nearest[flips & ~fg]
    return out


def simulate_rater(truth: LabelGrid, noise: RaterNoiseModel, rater_seed: int,
                   repeat_index: int = 0) -> LabelGrid:
    """Repeat 0 is the rater's base annotation; repeat k re-flips that base."""
    if noise.bias and len(noise.bias) != truth.ndim:
        raise ValueError(f"bias has {len(noise.bias)} components for a {truth.ndim}D grid")
    rng = rng_for("rater", rater_seed)
    labels = truth.voxels.astype(np.int64)
    labels = _shift(labels, noise.bias or (0,) * truth.ndim)
    if noise.boundary_jitter:
        labels = _jitter(labels, noise.boundary_jitter, rng)
    labels = _flip(labels, noise.flip_prob, rng)
    if repeat_index > 0:
        labels = _flip(labels, noise.repeat_flip_prob, rng_for("repeat", rater_seed, repeat_index))
    return LabelGrid(labels, truth.spacing, max(truth.max_label, int(labels.max())))


def simulate_binary_rater(truth: BinaryMask, sensitivity: float, specificity: float,
                          seed: int) -> BinaryMask:
    """Rater with fixed per-voxel sensitivity and specificity."""
    u = rng_for("binary-rater", seed).random(truth.dims)
    bits = np.where(truth.bits, u < sensitivity, u >= specificity)
    return BinaryMask(bits, truth.spacing)


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class TrajectorySpec:
    t_signal: float = 0.6
    n_steps: int = 51
    init_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.t_signal < 1:
            raise ValueError(f"t_signal must lie in (0, 1), got {self.t_signal}")
        if self.n_steps < 10:
            raise ValueError(f"n_steps must be >= 10, got {self.n_steps}")
        if not 0 <= self.init_noise <= 1:
            raise ValueError(f"init_noise must lie in [0, 1], got {self.init_noise}")

    def ts(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_steps)


class _Trajectory:
    """Per-voxel draws shared by every t, so outputs at different t are coupled."""

    def __init__(self, truth: LabelGrid, reference: LabelGrid, traj: TrajectorySpec):
        check_same_dims(truth, reference)
        self.truth, self.reference, self.traj = truth, reference, traj
        rng = rng_for("trajectory", traj.seed)
        shape = truth.dims
        self.u_learn = rng.random(shape)
        self.u_ref = rng.random(shape)
        top = max(truth.max_label, reference.max_label, 1)
        randomized = rng.random(shape) < traj.init_noise
        self.initial = np.where(randomized, rng.integers(0, top + 1, size=shape), 0)
        self.signal = truth.voxels == reference.voxels
        self.max_label = top

    def at(self, t: float) -> LabelGrid:
        if not 0 <= t <= 1:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        ts = self.traj.t_signal
        learnt = self.u_learn < min(1.0, t / ts)
        copies_ref = ~self.signal & (self.u_ref < max(0.0, (t - ts) / (1.0 - ts)))
        out = np.where(learnt, self.truth.voxels, self.initial)
        out = np.where(copies_ref, self.reference.voxels, out)
        return LabelGrid(out, self.truth.spacing, self.max_label)


def model_output(truth: LabelGrid, reference: LabelGrid, traj: TrajectorySpec, t: float) -> LabelGrid:
    return _Trajectory(truth, reference, traj).at(t)


@dataclass(frozen=True)
class PgtCurve:
    samples: tuple[tuple[float, float, float], ...]
    metric: MetricId

    def peak(self) -> tuple[float, float, float]:
        """Sample maximising similarity to truth; ties go to the smallest t."""
        i = int(np.argmax([s[2] for s in self.samples]))
        return self.samples[i]


def _similarity(metric, a, b, label):
    res = score(metric, a, b, label=label)
    if not res.defined:
        raise ValueError(f"{res.metric} undefined on a trajectory sample: {res.reason}")
    return res.similarity()


def sweep_trajectory(truth: LabelGrid, reference: LabelGrid, traj: TrajectorySpec, metric,
                     label: int | None = None) -> PgtCurve:
    mid = metric_id(metric)
    path = _Trajectory(truth, reference, traj)
    samples = []
    for t in traj.ts():
        out = path.at(float(t))
        samples.append((float(t), _similarity(mid, out, reference, label),
                        _similarity(mid, out, truth, label)))
    return PgtCurve(tuple(samples), mid)


# ---------------------------------------------------------------------------
# experiments

REFERENCES = ("rater", "majority", "staple")


@dataclass(frozen=True)
class ExperimentResult:
    band: PgtBand
    curve: PgtCurve
    peak: tuple[float, float, float]
    contained: bool
    tol: float
    reference: str
    phantom: PhantomSpec
    noise: RaterNoiseModel
    trajectory: TrajectorySpec
    bootstrap: BootstrapSpec
    n_raters: int
    n_repeats: int
    rater_seeds: tuple[int, ...]
    grids: dict = field(default_factory=dict, repr=False, compare=False)

    def specs(self) -> dict:
        return {
            "phantom": asdict(self.phantom),
            "noise": asdict(self.noise),
            "trajectory": asdict(self.trajectory),
            "bootstrap": asdict(self.bootstrap),
            "n_raters": self.n_raters,
            "n_repeats": self.n_repeats,
            "reference": self.reference,
            "tol": self.tol,
        }


def build_reference(raters: Sequence[LabelGrid], how: str) -> LabelGrid:
    if how == "rater":
        return raters[0]
    if how == "majority":
        return majority_vote(raters)
    if how == "staple":
        return staple_labels(raters)[0]
    raise ValueError(f"reference must be one of {REFERENCES}, got {how!r}")


def run_experiment(phantom: PhantomSpec, noise: RaterNoiseModel, n_raters: int = 5,
                   n_repeats: int = 2, traj: TrajectorySpec | None = None, metric="dice",
                   boot: BootstrapSpec | None = None, tol: float = 0.05,
                   reference: str = "rater", label: int | None = None) -> ExperimentResult:
    """Truth -> raters (+repeats) -> band -> reference -> trajectory -> peak.

    ``contained`` is whether the peak's similarity to the reference lies in
    the band widened by ``tol`` on both sides.
    """
    if n_raters < 2 or n_repeats < 2:
        raise ValueError("run_experiment needs n_raters >= 2 and n_repeats >= 2")
    traj = traj or TrajectorySpec(seed=phantom.seed)
    boot = boot or BootstrapSpec(n_resamples=200, seed=phantom.seed)
    truth = generate_phantom(phantom)
    seeds = tuple(derive_seed("rater-seed", phantom.seed, r) for r in range(n_raters))
    annotations = {}
    for r, rs in enumerate(seeds):
        for k in range(n_repeats):
            annotations[(f"r{r}", k)] = simulate_rater(truth, noise, rs, k)
    set_ = RaterSet((Item("phantom", annotations, truth),))
    band = estimate_band(set_, metric, boot, label=label)
    ref = build_reference([annotations[(f"r{r}", 0)] for r in range(n_raters)], reference)
    curve = sweep_trajectory(truth, ref, traj, metric, label=label)
    peak = curve.peak()
    lo, hi = band.edges
    contained = lo - tol <= peak[1] <= hi + tol
    grids = {"truth": truth, "reference": ref}
    grids.update({f"rater_{r}_{k}": g for (r, k), g in annotations.items()})
    return ExperimentResult(band, curve, peak, contained, tol, reference, phantom, noise, traj,
                            boot, n_raters, n_repeats, seeds, grids)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything ``run_experiment`` needs, loadable from one JSON document."""

    seed: int = 0
    phantom: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    trajectory: dict = field(default_factory=dict)
    bootstrap: dict = field(default_factory=dict)
    n_raters: int = 5
    n_repeats: int = 2
    metric: str = "dice"
    tol: float = 0.05
    reference: str = "rater"
    label: int | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    def run(self, seed: int | None = None) -> ExperimentResult:
        """Sub-seeds left out of the sections default to the master seed."""
        s = self.seed if seed is None else int(seed)
        phantom = dict(self.phantom)
        for key in ("dims", "blob_radius_range"):
            if key in phantom:
                phantom[key] = tuple(phantom[key])
        phantom.setdefault("seed", s)
        noise = dict(self.noise)
        if "bias" in noise:
            noise["bias"] = tuple(noise["bias"])
        traj = dict(self.trajectory)
        traj.setdefault("seed", s)
        boot = {"n_resamples": 200, **self.bootstrap}
        boot.setdefault("seed", s)
        return run_experiment(PhantomSpec(**phantom), RaterNoiseModel(**noise), self.n_raters,
                              self.n_repeats, TrajectorySpec(**traj), self.metric,
                              BootstrapSpec(**boot), self.tol, self.reference, self.label)
