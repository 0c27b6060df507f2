"""Command-line interface for the staged garment-animation pipeline."""

from __future__ import annotations

import argparse
import logging
import sys

from garmdyn.pipeline import run_pipeline


def _add_common(p):
    p.add_argument("--config", action="append", default=None,
                   help="config overlay file (key = value); repeatable, applied in order")
    p.add_argument("--seed", type=int, default=None, help="override the RNG seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="garmdyn",
        description="Garment animation: simulate data, train the three stages, "
                    "infer, enhance, resolve collisions, evaluate, ablate.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-data", help="generate the synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset output directory")

    p = sub.add_parser("train-gen", help="stage 1: garment generative model")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("train-motion", help="stage 2: dynamic motion encoder")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", nargs=1, required=True, metavar="GEN")
    p.add_argument("--out", required=True)
    p.add_argument("--no-previous-state", action="store_true",
                   help="ablation: feed zeros in place of the previous garment")

    p = sub.add_parser("train-detail", help="stage 3: adversarial detail enhancement")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", nargs=2, required=True, metavar=("GEN", "MOT"))
    p.add_argument("--out", required=True)
    p.add_argument("--no-adversarial", action="store_true",
                   help="ablation: train the generator on geometry loss only")

    p = sub.add_parser("infer", help="autoregressive rollout over a motion clip")
    _add_common(p)
    p.add_argument("--motion", required=True, help="GMOT motion clip")
    p.add_argument("--checkpoint", nargs=2, required=True, metavar=("GEN", "MOT"))
    p.add_argument("--data", required=True, help="dataset directory (template + body)")
    p.add_argument("--out", required=True, help="output GSEQ sequence")
    p.add_argument("--latents", default=None, help="also save per-frame latent codes (.npy)")
    p.add_argument("--v0", default=None, help="GSEQ whose first frame seeds the rollout")

    p = sub.add_parser("enhance", help="apply the detail generator to a sequence")
    _add_common(p)
    p.add_argument("--sequence", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--checkpoint", nargs=1, required=True, metavar="DETAIL")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("resolve", help="push a sequence outside the posed body")
    _add_common(p)
    p.add_argument("--sequence", required=True)
    p.add_argument("--body", required=True, help="posed body clip (GSEQ)")
    p.add_argument("--body-template", required=True, help="body model JSON")
    p.add_argument("--template", required=True, help="garment template OBJ")
    p.add_argument("--eps", type=float, default=None, help="clearance threshold (m)")
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="per-frame penetration report path")

    p = sub.add_parser("eval", help="RMSE / Hausdorff / STED against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--edges", required=True, help="template OBJ supplying the edge list")
    p.add_argument("--report", required=True)

    p = sub.add_parser("ablate", help="emit rollout-horizon and detail-variant tables")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoints", required=True,
                   help="directory with gen.pt, motion_full.pt, motion_noprev.pt, "
                        "detail_full.pt, detail_nodisc.pt (missing rows marked absent)")
    p.add_argument("--out", required=True)
    p.add_argument("--horizons", default="100,500,1200")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        run_pipeline(args.command, args)
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
