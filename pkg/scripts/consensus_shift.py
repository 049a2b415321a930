"""Compare the peak reached against a single rater and against fused references.

    python scripts/consensus_shift.py --seeds 50
"""
import argparse
import json
from pathlib import Path

import numpy as np

from pgtband.sim import REFERENCES, ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None, help="JSON config (defaults otherwise)")
    ap.add_argument("--seeds", type=int, default=50)
    args = ap.parse_args()

    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    peaks = {}
    for how in REFERENCES:
        cfg = ExperimentConfig.from_dict({**raw, "reference": how})
        peaks[how] = np.array([cfg.run(seed=s).peak[1] for s in range(args.seeds)])

    base = peaks["rater"]
    for how, vals in peaks.items():
        diff = vals - base
        print(f"{how:<9} peak ref sim {vals.mean():.4f}  shift vs rater {diff.mean():+.4f} "
              f"(>= 0 in {(diff >= 0).sum()}/{len(diff)})")


if __name__ == "__main__":
    main()
