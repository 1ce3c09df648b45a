"""Run a set of search policies over a dataset and plot the outcome.

Wraps the library runner, then renders one cumulative-performance figure
per experiment and a scanpath overlay for the first trial of each policy.

Usage:
  python3 scripts/run_baselines.py --manifest demo_data/manifest.json \
      --policies chance,sliding_window,template_matching --out demo_out
"""

import argparse
import os
import sys
from collections import defaultdict

from ivsn.harness import (
    RunConfig,
    build_trial,
    load_manifest,
    read_scanpaths_csv,
    render_curves,
    render_scanpath,
    run_experiment,
)
from ivsn.metrics import cumulative_performance


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--policies", default="chance,sliding_window,template_matching")
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--budget", type=int, default=None)
    parser.add_argument("--features-dir", default=None)
    parser.add_argument("--chance-repetitions", type=int, default=100)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)

    manifest = load_manifest(args.manifest)
    config = RunConfig(
        policies=[p.strip() for p in args.policies.split(",") if p.strip()],
        out_dir=args.out,
        seed=args.seed,
        backend="precomputed" if args.features_dir else "random",
        features_dir=args.features_dir,
        budget=args.budget,
        chance_repetitions=args.chance_repetitions,
        workers=args.workers,
    )
    result = run_experiment(config, manifest)
    print(f"{len(result.scanpaths)} scanpaths; summary at {args.out}/summary.json")
    for policy, stats in result.summary["policies"].items():
        mean = stats["mean_fixations"]
        mean_txt = f"{mean:.2f}" if mean is not None else "n/a"
        print(f"  {policy:20s} mean fixations {mean_txt:>6s}  "
              f"unfound {stats['fraction_unfound']:.2%}")

    paths = read_scanpaths_csv(os.path.join(args.out, "scanpaths.csv"))
    by_exp = defaultdict(lambda: defaultdict(list))
    exp_of = {e.id: e.experiment for e in manifest.trials}
    for p in paths:
        by_exp[exp_of[p.trial_id]][p.policy].append(p)
    for experiment, groups in sorted(by_exp.items()):
        curves = []
        for policy, mine in sorted(groups.items()):
            max_n = max(len(p.fixations) for p in mine)
            curves.append((policy, cumulative_performance(mine, max_n=max_n)))
        fig_path = os.path.join(args.out, f"curves_{experiment}.png")
        render_curves(curves, fig_path)
        print(f"  curves for {experiment} -> {fig_path}")

    rendered = set()
    for p in paths:
        if p.policy in rendered:
            continue
        rendered.add(p.policy)
        entry = manifest.entry(p.trial_id)
        trial = build_trial(entry, load_images=True, root=manifest.root)
        overlay = os.path.join(args.out, f"scanpath_{p.policy}_{p.trial_id}.png")
        render_scanpath(trial, p, overlay)
        print(f"  overlay -> {overlay}")
    return 1 if result.skipped else 0


if __name__ == "__main__":
    sys.exit(main())
