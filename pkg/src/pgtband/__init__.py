"""Annotation reliability and Peak Ground Truth (PGT) band estimation."""

__version__ = "0.1.0"

from .grid import BinaryMask, LabelGrid, LgridError, binarize, foreground, load, read_lgrid, save, write_lgrid  # noqa: E402
from .metrics import MetricId, MetricResult, score  # noqa: E402
from .reliability import BootstrapSpec, Item, RaterSet, inter_rater, intra_rater  # noqa: E402
from .pgt import PgtBand, Verdict, classify_score, estimate_band, evaluate_models  # noqa: E402

__all__ = [
    "BinaryMask", "LabelGrid", "LgridError", "binarize", "foreground", "load", "read_lgrid", "save", "write_lgrid",
    "MetricId", "MetricResult", "score",
    "BootstrapSpec", "Item", "RaterSet", "inter_rater", "intra_rater",
    "PgtBand", "Verdict", "classify_score", "estimate_band", "evaluate_models",
]
