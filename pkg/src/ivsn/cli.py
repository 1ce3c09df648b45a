"""Command-line interface: run experiments, compute metrics, ingest, render.

Subcommands
  run      simulate policies over a manifest and write scanpaths + summary
  metrics  curves, scanpath similarity, or fixation-count correlation
  ingest   convert a human fixation CSV into oracle-scored scanpaths
  render   draw one scanpath over its search image

Exit code is 0 only when the requested work completed with nothing skipped
or rejected.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .harness import (
    RunConfig,
    build_trial,
    ingest_human_fixations,
    load_manifest,
    read_scanpaths_csv,
    render_curves,
    render_scanpath,
    run_experiment,
    write_curve_csv,
    write_json_atomic,
    write_scanpaths_csv,
)
from .metrics import (
    cumulative_performance,
    fixation_count_correlation,
    meanshift_cluster,
    scanpath_score,
)


def _cmd_run(args) -> int:
    manifest = load_manifest(args.manifest)
    config = RunConfig(
        policies=[p.strip() for p in args.policies.split(",") if p.strip()],
        out_dir=args.out,
        seed=args.seed,
        backend="precomputed" if args.features_dir else "random",
        features_dir=args.features_dir,
        weight_seed=args.weight_seed,
        budget=args.budget,
        pixels_per_degree=args.pixels_per_degree,
        chance_repetitions=args.chance_repetitions,
        ranweight_iterations=args.ranweight_iterations,
        workers=args.workers,
        dump_attention=args.dump_attention,
    )
    result = run_experiment(config, manifest)
    print(f"wrote {len(result.scanpaths)} scanpaths to {config.out_dir}")
    if result.skipped:
        print(f"skipped {len(result.skipped)} trial runs:", file=sys.stderr)
        for item in result.skipped[:20]:
            print(f"  {item['trial']} [{item['policy']}]: {item['error']}", file=sys.stderr)
        return 1
    return 0


def _group_label(path) -> str:
    return path.policy


def _cmd_metrics(args) -> int:
    paths_a = read_scanpaths_csv(args.scanpaths[0])
    paths_b = read_scanpaths_csv(args.scanpaths[1]) if len(args.scanpaths) > 1 else None
    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)

    if args.mode == "curve":
        labels = sorted({_group_label(p) for p in paths_a})
        for label in labels:
            mine = [p for p in paths_a if _group_label(p) == label]
            curve = cumulative_performance(mine, max_n=args.max_n)
            stem, ext = os.path.splitext(args.out)
            out = args.out if len(labels) == 1 else f"{stem}_{label.replace('/', '_')}{ext}"
            write_curve_csv(out, curve)
            print(f"{label}: n={curve.n_trials} "
                  f"mean_when_found={curve.mean_fixations_when_found():.3f} -> {out}")
        return 0

    if args.mode == "similarity":
        if paths_b is None:
            paths_b = paths_a
        human_fix = [f for p in paths_a for f in p.fixations]
        clustering = meanshift_cluster(human_fix, bandwidth=args.bandwidth)
        labels_a = sorted({_group_label(p) for p in paths_a})
        labels_b = sorted({_group_label(p) for p in paths_b})
        by_trial_a = {}
        for p in paths_a:
            by_trial_a.setdefault(p.trial_id, []).append(p)
        by_trial_b = {}
        for p in paths_b:
            by_trial_b.setdefault(p.trial_id, []).append(p)
        matrix = np.full((len(labels_a), len(labels_b)), np.nan)
        for i, la in enumerate(labels_a):
            for j, lb in enumerate(labels_b):
                scores = []
                for trial_id in sorted(set(by_trial_a) & set(by_trial_b)):
                    for pa in by_trial_a[trial_id]:
                        if _group_label(pa) != la or not pa.fixations:
                            continue
                        for pb in by_trial_b[trial_id]:
                            if _group_label(pb) != lb or not pb.fixations:
                                continue
                            if pa is pb:
                                continue
                            scores.append(scanpath_score(pa, pb, clustering,
                                                         prefix_len=args.prefix_len).score)
                if scores:
                    matrix[i, j] = float(np.mean(scores))
        lines = ["," + ",".join(labels_b)]
        for i, la in enumerate(labels_a):
            cells = [f"{matrix[i, j]:.6f}" if np.isfinite(matrix[i, j]) else ""
                     for j in range(len(labels_b))]
            lines.append(la + "," + ",".join(cells))
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"similarity matrix ({len(labels_a)}x{len(labels_b)}) -> {args.out}")
        return 0

    if args.mode == "correlation":
        if paths_b is None:
            print("correlation mode needs two scanpath files", file=sys.stderr)
            return 2

        def per_trial_mean(paths):
            counts = {}
            for p in paths:
                if p.found:
                    counts.setdefault(p.trial_id, []).append(p.found_at)
            return {t: float(np.mean(v)) for t, v in counts.items()}

        count_a = per_trial_mean(paths_a)
        count_b = per_trial_mean(paths_b)
        common = sorted(set(count_a) & set(count_b))
        pairs = [(count_a[t], count_b[t]) for t in common]
        try:
            r = fixation_count_correlation(pairs)
        except ValueError as exc:
            print(f"cannot correlate: {exc}", file=sys.stderr)
            return 2
        payload = {"n_pairs": len(pairs), "pearson_r": r}
        write_json_atomic(args.out, payload)
        print(json.dumps(payload))
        return 0

    print(f"unknown mode {args.mode}", file=sys.stderr)
    return 2


def _cmd_ingest(args) -> int:
    manifest = load_manifest(args.manifest)
    result = ingest_human_fixations(args.fixations, manifest,
                                    merge_box_px=args.merge_box,
                                    center_radius_px=args.center_radius)
    write_scanpaths_csv(args.out, result.scanpaths)
    rep = result.report
    print(f"rows in={rep.rows_in} used={rep.rows_used} "
          f"rejected={rep.rows_rejected} merged_away={rep.rows_merged_away}")
    print(f"{len(result.scanpaths)} scanpaths -> {args.out}")
    if not rep.consistent():
        print("row accounting is inconsistent", file=sys.stderr)
        return 1
    return 1 if rep.rows_rejected else 0


def _cmd_render(args) -> int:
    manifest = load_manifest(args.manifest)
    paths = [p for p in read_scanpaths_csv(args.scanpath) if p.trial_id == args.trial]
    if not paths:
        print(f"no scanpath for trial {args.trial!r} in {args.scanpath}", file=sys.stderr)
        return 1
    entry = manifest.entry(args.trial)
    trial = build_trial(entry, load_images=True, root=manifest.root)
    render_scanpath(trial, paths[0], args.out)
    print(f"rendered {args.trial} ({paths[0].policy}) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ivsn", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate search policies over a dataset")
    run.add_argument("--manifest", required=True)
    run.add_argument("--policies", required=True,
                     help="comma-separated, e.g. ivsn,chance,sliding_window")
    run.add_argument("--features-dir", default=None,
                     help="directory of precomputed IVSNT1 tensors (else random-conv features)")
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--budget", type=int, default=None,
                     help="override the per-experiment fixation budget")
    run.add_argument("--weight-seed", type=int, default=0)
    run.add_argument("--pixels-per-degree", type=float, default=32.0)
    run.add_argument("--chance-repetitions", type=int, default=100)
    run.add_argument("--ranweight-iterations", type=int, default=30)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--dump-attention", action="store_true",
                     help="also write each trial's attention map as IVSNT1 + PNG")
    run.set_defaults(func=_cmd_run)

    met = sub.add_parser("metrics", help="curves, similarity, or correlation")
    met.add_argument("--scanpaths", nargs="+", required=True,
                     help="one or two scanpath CSV files")
    met.add_argument("--mode", choices=("curve", "similarity", "correlation"), required=True)
    met.add_argument("--out", required=True)
    met.add_argument("--max-n", type=int, default=None)
    met.add_argument("--bandwidth", type=float, default=100.0,
                     help="mean-shift bandwidth in pixels for similarity")
    met.add_argument("--prefix-len", type=int, default=None)
    met.set_defaults(func=_cmd_metrics)

    ing = sub.add_parser("ingest", help="convert human fixations to scanpaths")
    ing.add_argument("--fixations", required=True)
    ing.add_argument("--manifest", required=True)
    ing.add_argument("--out", required=True)
    ing.add_argument("--merge-box", type=int, default=45)
    ing.add_argument("--center-radius", type=int, default=32)
    ing.set_defaults(func=_cmd_ingest)

    ren = sub.add_parser("render", help="draw a scanpath over its search image")
    ren.add_argument("--trial", required=True)
    ren.add_argument("--scanpath", required=True)
    ren.add_argument("--manifest", required=True)
    ren.add_argument("--out", required=True)
    ren.set_defaults(func=_cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
