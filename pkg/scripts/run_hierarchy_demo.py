#!/usr/bin/env python3
"""Two-level prediction demo: train a small building-level model, train a
room-level model for one of its segments, wire them with a hierarchy config,
and classify validation images through the coarse-to-fine path.

The room-level dataset reuses the routed segment's generator seed so its
classes look like sub-areas of that segment.
"""

import argparse
import sys
from pathlib import Path

from deepspace import datasets
from deepspace.cli import main as cli
from deepspace.hierarchy import HierarchyConfig, Route, write_hierarchy_config


def run(argv):
    print("+ deepspace " + " ".join(str(a) for a in argv), file=sys.stderr)
    code = cli([str(a) for a in argv])
    if code != 0:
        sys.exit(code)


def train_one(data_dir, model_path, classes, per_class, side, seed, iters, prefix):
    run(["synth", "--classes", classes, "--per-class", per_class,
         "--out", data_dir, "--side", side, "--seed", seed, "--prefix", prefix])
    man = data_dir / "manifest.txt"
    run(["prep", "--in-manifest", man, "--out-dir", data_dir / "prep",
         "--resize-to", side, "--blur-threshold", "0.45",
         "--val-per-class", max(2, per_class // 5), "--seed", seed + 1])
    run(["train", "--train", data_dir / "prep" / "train.txt",
         "--val", data_dir / "prep" / "val.txt",
         "--input-side", side, "--channels", "8,16,16,24,24",
         "--dropout", "0.15", "--lrn-k", "1.0", "--lr", "1e-3",
         "--decay-every", "500", "--batch", "32", "--iters", iters,
         "--eval-every", "100", "--stop-at-top1", "0.95",
         "--seed", seed + 2, "--out-model", model_path])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/hierarchy")
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--per-class", type=int, default=120)
    ap.add_argument("--iters", type=int, default=1500)
    ap.add_argument("--routed-class", type=int, default=0,
                    help="building-level class index refined by the room model")
    args = ap.parse_args()

    out = Path(args.out)
    building_model = out / "building.dspw"
    room_model = out / "rooms.dspw"
    train_one(out / "building_data", building_model, 4, args.per_class,
              args.side, seed=70, iters=args.iters, prefix="segment")
    train_one(out / "room_data", room_model, 3, args.per_class,
              args.side, seed=71, iters=args.iters, prefix="room")

    cfg_path = out / "hierarchy.cfg"
    write_hierarchy_config(
        HierarchyConfig(str(building_model), {args.routed_class: Route(str(room_model))}),
        cfg_path,
    )
    print(f"hierarchy config: {cfg_path}", file=sys.stderr)

    val = datasets.load_manifest(out / "building_data" / "prep" / "val.txt")
    samples = [out / "building_data" / "prep" / rel for rel, _ in val.entries[:8]]
    run(["predict", "--hierarchy-config", cfg_path] + samples)


if __name__ == "__main__":
    main()
