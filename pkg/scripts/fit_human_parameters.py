"""Fit the data-driven model variants from ingested human scanpaths.

Estimates the finite-memory curve (from per-lag revisit rates within a
3-degree radius) and the saccade-size gamma (method of moments), the two
inputs of the fading-memory and size-constrained search variants.  Fitting
uses a fixed random subset of subjects to leave held-out subjects for
comparison.

Usage:
  python3 scripts/fit_human_parameters.py --scanpaths human.csv --out fits.json
"""

import argparse
import json
import sys

import numpy as np

from ivsn.attention import fit_memory_function, fit_saccade_gamma
from ivsn.harness import read_scanpaths_csv, write_json_atomic
from ivsn.metrics import revisit_probability_by_lag, saccade_size_stats


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scanpaths", required=True, help="ingested human scanpath CSV")
    parser.add_argument("--out", required=True)
    parser.add_argument("--pixels-per-degree", type=float, default=32.0)
    parser.add_argument("--revisit-radius-deg", type=float, default=3.0)
    parser.add_argument("--fit-subjects", type=int, default=7,
                        help="subjects used for fitting; the rest are held out")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    paths = read_scanpaths_csv(args.scanpaths)
    subjects = sorted({p.policy for p in paths})
    rng = np.random.default_rng(args.seed)
    k = min(args.fit_subjects, len(subjects))
    fit_set = set(rng.choice(subjects, size=k, replace=False).tolist())
    fit_paths = [p for p in paths if p.policy in fit_set]
    if not fit_paths:
        print("no scanpaths to fit", file=sys.stderr)
        return 1

    lags, probs = revisit_probability_by_lag(
        fit_paths, radius_deg=args.revisit_radius_deg,
        pixels_per_degree=args.pixels_per_degree)
    usable = lags <= 20
    memory = fit_memory_function(lags[usable], probs[usable],
                                 revisit_radius_deg=args.revisit_radius_deg)

    stats = saccade_size_stats(fit_paths, pixels_per_degree=args.pixels_per_degree)
    shape, scale = fit_saccade_gamma(stats.sizes_deg)

    payload = {
        "fit_subjects": sorted(fit_set),
        "held_out_subjects": sorted(set(subjects) - fit_set),
        "memory": {"beta": memory.beta, "tau": memory.tau,
                   "revisit_radius_deg": memory.revisit_radius_deg},
        "saccade_gamma": {"shape": shape, "scale_deg": scale,
                          "mean_deg": stats.mean, "sd_deg": stats.sd},
        "revisit_probability_by_lag": {int(l): float(p) for l, p in zip(lags, probs)},
    }
    write_json_atomic(args.out, payload)
    print(json.dumps(payload["memory"]))
    print(json.dumps(payload["saccade_gamma"]))
    print(f"fits -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
