"""Band edges and peak position as rater noise grows.

    python scripts/noise_sweep.py --flips 0.01 0.02 0.05 0.1 0.2 --seeds 10
"""
import argparse

import numpy as np

from pgtband.sim import PhantomSpec, RaterNoiseModel, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--flips", type=float, nargs="+", default=[0.01, 0.02, 0.05, 0.1, 0.2])
    ap.add_argument("--repeat-ratio", type=float, default=0.4,
                    help="repeat flip probability as a fraction of the rater flip probability")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--dims", type=int, nargs="+", default=[128, 128])
    ap.add_argument("--metric", default="dice")
    args = ap.parse_args()

    print("flip   lower   upper   peak_ref  contained")
    for p in args.flips:
        noise = RaterNoiseModel(flip_prob=p, repeat_flip_prob=p * args.repeat_ratio)
        res = [run_experiment(PhantomSpec(tuple(args.dims), seed=s), noise, metric=args.metric)
               for s in range(args.seeds)]
        lo = np.mean([r.band.lower.point for r in res])
        hi = np.mean([r.band.upper.point for r in res])
        peak = np.mean([r.peak[1] for r in res])
        frac = np.mean([r.contained for r in res])
        print(f"{p:<6.3f} {lo:.4f}  {hi:.4f}  {peak:.4f}    {frac:.0%}")


if __name__ == "__main__":
    main()
