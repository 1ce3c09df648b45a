"""Exporter CLI.

  ivsn-export export --manifest M --layers 30,31 --out DIR [--tile] [--weights PATH]

Exit code 0 only when every manifest image exported cleanly.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .exporter import ExportJob, WeightsUnavailable, export_features


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ivsn-export", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="export activations for manifest images")
    exp.add_argument("--manifest", required=True)
    exp.add_argument("--layers", default="30,31",
                     help="comma-separated layer ids (default 30,31)")
    exp.add_argument("--out", required=True)
    exp.add_argument("--tile", action="store_true",
                     help="partition search images into 224 px tiles")
    exp.add_argument("--weights", default=None,
                     help="local state dict; default uses the torchvision cache")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    job = ExportJob(manifest_path=args.manifest,
                    layers=[int(tok) for tok in args.layers.split(",") if tok.strip()],
                    output_dir=args.out, tile=args.tile, weights_path=args.weights)
    try:
        count = export_features(job)
    except WeightsUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    with open(os.path.join(args.out, "features_index.json")) as fh:
        skipped = json.load(fh).get("skipped", [])
    print(f"wrote {count} tensor files to {args.out}")
    if skipped:
        print(f"skipped {len(skipped)} images: {', '.join(skipped)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
