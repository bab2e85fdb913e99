#!/usr/bin/env python3
"""End-to-end desk-scale experiment: generate synthetic scenes, prepare the
dataset (rescale, sharpness filter, validation split), train the reduced
model, evaluate with a prediction log, run the misclassification analysis,
and render an activation-map overlay for one validation image.

Everything lands under the chosen output directory; rerunning with the same
seed reproduces it.
"""

import argparse
import sys
from pathlib import Path

from deepspace import datasets
from deepspace.cli import main as cli


def run(argv):
    print("+ deepspace " + " ".join(str(a) for a in argv), file=sys.stderr)
    code = cli([str(a) for a in argv])
    if code != 0:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/desk", help="experiment directory")
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--val-per-class", type=int, default=40)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=202)
    args = ap.parse_args()

    out = Path(args.out)
    raw = out / "raw"
    prep = out / "prepared"
    model = out / "model.dspw"
    ana = out / "analysis"

    run(["synth", "--classes", args.classes, "--per-class", args.per_class,
         "--out", raw, "--side", args.side, "--seed", args.seed])
    run(["prep", "--in-manifest", raw / "manifest.txt", "--out-dir", prep,
         "--resize-to", args.side, "--blur-threshold", "0.45",
         "--val-per-class", args.val_per_class, "--seed", args.seed + 1])
    run(["train", "--train", prep / "train.txt", "--val", prep / "val.txt",
         "--input-side", args.side, "--channels", "8,16,16,24,24",
         "--dropout", "0.15", "--lrn-k", "1.0",
         "--lr", "1e-3", "--decay-every", "500", "--decay", "0.5",
         "--momentum", "0.9", "--batch", "32", "--iters", args.iters,
         "--eval-every", "100", "--stop-at-top1", "0.97",
         "--seed", args.seed + 2, "--out-model", model])
    run(["eval", "--model", model, "--manifest", prep / "val.txt",
         "--log-predictions", out / "val_predictions.txt"])
    run(["analyze", "--predictions", out / "val_predictions.txt",
         "--class-names", prep / "val.txt", "--threshold", "0.01",
         "--out-dir", ana, "--model", model])

    val = datasets.load_manifest(prep / "val.txt")
    sample = prep / val.entries[0][0]
    run(["cam", "--model", model, "--out", out / "cam_overlay.png",
         "--raw-out", out / "cam_grid.txt", sample])
    run(["predict", "--model", model, sample])
    print(f"\nartifacts under {out}/", file=sys.stderr)


if __name__ == "__main__":
    main()
