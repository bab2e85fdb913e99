"""Command-line pipeline: generate or prepare data, train, evaluate, predict
hierarchically, render activation maps, and run misclassification analysis.

Every subcommand accepts --config FILE with `key = value` lines (keys are the
flag names); explicit flags win over config values, and unknown keys are
rejected. Paper-sourced defaults are marked "(paper)" in --help. Diagnostics
go to stderr; data goes to files or stdout. Exit status is 0 only on success.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, blur, cam, datasets, hierarchy, imageio, training
from . import model as dsmodel
from .layers import LrnParams
from .tensor import Rng


@dataclass
class Opt:
    name: str  # flag name (dashes)
    type: object  # str -> value converter
    default: object
    help: str
    paper: bool = False
    is_flag: bool = False

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_channels(s: str):
    parts = tuple(int(v) for v in s.split(","))
    if len(parts) != 5:
        raise ValueError("channels must be five comma-separated widths")
    return parts


def _parse_class(s: str):
    return None if s == "argmax" else int(s)


def _add_opts(parser: argparse.ArgumentParser, opts: list[Opt]):
    for o in opts:
        note = " (paper)" if o.paper else ""
        text = f"{o.help}{note} [default: {o.default}]"
        if o.is_flag:
            parser.add_argument(f"--{o.name}", dest=o.dest, action="store_const",
                                const=True, default=None, help=text)
        else:
            parser.add_argument(f"--{o.name}", dest=o.dest, type=str, default=None,
                                metavar="V", help=text)
    parser.add_argument("--config", type=str, default=None, metavar="FILE",
                        help="key = value overlay file; explicit flags win")


def _read_overlay(path: str) -> dict[str, str]:
    overlay = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        overlay[key.replace("-", "_")] = value
    return overlay


def _resolve(args, opts: list[Opt]):
    overlay = _read_overlay(args.config) if args.config else {}
    known = {o.dest for o in opts}
    for key in overlay:
        if key not in known:
            raise ValueError(f"unknown config key {key!r}; accepted: {sorted(known)}")
    for o in opts:
        raw = getattr(args, o.dest)
        if raw is None and o.dest in overlay:
            raw = overlay[o.dest]
        if raw is None:
            value = o.default
        elif isinstance(raw, str):
            value = _parse_bool(raw) if o.is_flag else o.type(raw)
        else:
            value = raw
        setattr(args, o.dest, value)


def _require(args, names):
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            raise ValueError(f"--{name} is required")


def _status(msg: str):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# synth

SYNTH_OPTS = [
    Opt("classes", int, None, "number of place classes to generate (>= 2)"),
    Opt("per-class", int, 50, "images rendered per class"),
    Opt("out", str, None, "output directory for images and manifest"),
    Opt("side", int, 64, "square image side in pixels"),
    Opt("seed", int, 0, "generator seed; same seed reproduces identical files"),
    Opt("prefix", str, "zone", "class-name prefix (names are <prefix>_<index>)"),
]


def cmd_synth(args) -> int:
    _require(args, ["classes", "out"])
    manifest = datasets.synth_generate(args.classes, args.per_class, args.out,
                                       args.side, Rng(args.seed), name_prefix=args.prefix)
    _status(f"wrote {len(manifest.entries)} images across {manifest.num_classes} "
            f"classes under {args.out}")
    return 0


# ---------------------------------------------------------------------------
# prep

PREP_OPTS = [
    Opt("in-manifest", str, None, "manifest of raw input images"),
    Opt("out-dir", str, None, "output directory for resized images and split manifests"),
    Opt("resize-to", int, 256, "square side images are rescaled to", paper=True),
    Opt("blur-threshold", float, 0.45,
        "minimum sharpness indicator; lower-scoring images are dropped", paper=True),
    Opt("val-per-class", int, 300, "validation images held out per class", paper=True),
    Opt("seed", int, 0, "seed for the validation split"),
]


def cmd_prep(args) -> int:
    _require(args, ["in-manifest", "out-dir"])
    manifest = datasets.load_manifest(args.in_manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    kept_entries = []
    kept = [0] * manifest.num_classes
    dropped = [0] * manifest.num_classes
    for rel, label in manifest.entries:
        rec = imageio.decode_image(manifest.root / rel)
        rec = imageio.resize_bilinear(rec, args.resize_to, args.resize_to)
        verdict = blur.blur_indicator(rec, threshold=args.blur_threshold)
        if not verdict.is_sharp:
            dropped[label] += 1
            continue
        kept[label] += 1
        out_path = out_dir / rel
        out_path.parent.mkdir(parents=True, exist_ok=True)
        imageio.save_image(rec.pixels, out_path)
        kept_entries.append((rel, label))

    filtered = datasets.DatasetManifest(out_dir, kept_entries, manifest.class_names)
    train_m, val_m = datasets.split_validation(filtered, args.val_per_class, Rng(args.seed))
    datasets.write_manifest(train_m, out_dir / "train.txt")
    datasets.write_manifest(val_m, out_dir / "val.txt")

    report_lines = ["# class_index class_name kept dropped"]
    for c, name in enumerate(manifest.class_names):
        report_lines.append(f"{c} {name} {kept[c]} {dropped[c]}")
    (out_dir / "prep_report.txt").write_text("\n".join(report_lines) + "\n")
    _status(f"kept {sum(kept)}, dropped {sum(dropped)}; "
            f"train {len(train_m.entries)}, val {len(val_m.entries)}")
    return 0


# ---------------------------------------------------------------------------
# train

TRAIN_OPTS = [
    Opt("train", str, None, "training manifest"),
    Opt("val", str, None, "validation manifest"),
    Opt("classes", int, None, "expected class count (checked against the manifest)"),
    Opt("input-side", int, 227, "network input side", paper=True),
    Opt("lr", float, 1e-4, "base learning rate", paper=True),
    Opt("momentum", float, 0.9, "SGD momentum", paper=True),
    Opt("decay-every", int, 2000, "iterations between learning-rate decays", paper=True),
    Opt("decay", float, 0.5, "learning-rate decay factor", paper=True),
    Opt("batch", int, 64, "minibatch size"),
    Opt("iters", int, 10000, "training iterations"),
    Opt("seed", int, 0, "seed for init, shuffling, crops, and dropout"),
    Opt("out-model", str, None, "path for the best-validation checkpoint"),
    Opt("report", str, None, "path for the CSV training report [default: <out-model>.report.csv]"),
    Opt("precision", str, "single", "numeric precision: single | double"),
    Opt("eval-every", int, 200, "iterations between validation evaluations"),
    Opt("channels", _parse_channels, dsmodel.DEFAULT_CHANNELS,
        "five convolution-stage widths, comma separated"),
    Opt("dropout", float, 0.5, "dropout rate after the first two pooling stages", paper=True),
    Opt("lrn-n", int, 5, "response-normalization channel neighborhood"),
    Opt("lrn-k", float, 2.0, "response-normalization additive constant"),
    Opt("lrn-alpha", float, 1e-4, "response-normalization scale"),
    Opt("lrn-beta", float, 0.75, "response-normalization exponent"),
    Opt("stop-at-top1", float, None, "stop early once validation top-1 reaches this"),
    Opt("no-mean-norm", None, False, "skip per-channel training-mean subtraction", is_flag=True),
    Opt("no-wall-clock", None, False,
        "write 0.0 in the report's seconds column so reruns are byte-identical", is_flag=True),
]


def cmd_train(args) -> int:
    _require(args, ["train", "val", "out-model"])
    train_m = datasets.load_manifest(args.train)
    val_m = datasets.load_manifest(args.val)
    if train_m.class_names != val_m.class_names:
        raise ValueError("train and val manifests disagree on class names")
    if args.classes is not None and args.classes != train_m.num_classes:
        raise ValueError(
            f"--classes {args.classes} but the manifest defines {train_m.num_classes}"
        )

    lrn = LrnParams(args.lrn_n, args.lrn_k, args.lrn_alpha, args.lrn_beta)
    spec = dsmodel.deepspace_spec(
        train_m.num_classes, args.input_side, channels=args.channels,
        dropout_rate=args.dropout, lrn_params=lrn, class_names=train_m.class_names,
    )
    state = dsmodel.init_params(spec, Rng(args.seed),
                                dtype=np.float64 if args.precision == "double" else np.float32)

    fit = imageio.fit_resize_side(args.input_side)
    _status(f"loading images at {fit}px (crop {args.input_side}px)")
    train_set = datasets.load_images(train_m, fit)
    val_set = datasets.load_images(val_m, fit)
    if not args.no_mean_norm:
        state.channel_mean = datasets.channel_mean(train_set)

    cfg = training.TrainConfig(
        base_lr=args.lr, decay_factor=args.decay, decay_every=args.decay_every,
        momentum=args.momentum, batch_size=args.batch, max_iterations=args.iters,
        seed=args.seed, precision=args.precision, eval_every=args.eval_every,
        stop_at_top1=args.stop_at_top1, wall_clock=not args.no_wall_clock,
    )
    best, report = training.train(state, train_set, val_set, cfg)

    dsmodel.save(best, args.out_model)
    report_path = args.report or f"{args.out_model}.report.csv"
    report.write(report_path)
    last = report.points[-1]
    _status(f"best validation top-1 {report.best_top1():.4f}; "
            f"final point: iter {last.iteration}, top-1 {last.top1:.4f}, top-5 {last.top5:.4f}")
    _status(f"checkpoint: {args.out_model}; report: {report_path}")
    return 0


# ---------------------------------------------------------------------------
# eval

EVAL_OPTS = [
    Opt("model", str, None, "weight file to evaluate"),
    Opt("manifest", str, None, "dataset manifest"),
    Opt("log-predictions", str, None, "write `<true> <predicted>` lines here"),
    Opt("batch", int, 64, "evaluation batch size"),
]


def _predict_all(state, data, batch_size):
    """Center-crop argmax predictions plus stacked probabilities."""
    side = state.spec.input_shape[1]
    src = data.images.shape[2]
    dtype = state.params[next(iter(state.params))].dtype
    probs_parts = []
    for start in range(0, len(data), batch_size):
        idx = range(start, min(start + batch_size, len(data)))
        x = training._crop_batch(data.images, idx, side,
                                 training._center_offsets(src, side, len(idx)), dtype)
        probs, _, _ = dsmodel.forward(state, x)
        probs_parts.append(probs)
    probs = np.concatenate(probs_parts, axis=0)
    preds = np.argsort(-probs, axis=1, kind="stable")[:, 0]
    return probs, preds


def cmd_eval(args) -> int:
    _require(args, ["model", "manifest"])
    state = dsmodel.load(args.model)
    manifest = datasets.load_manifest(args.manifest)
    if manifest.class_names != state.spec.class_names:
        raise ValueError("class names in the manifest do not match the model")
    data = datasets.load_images(manifest, imageio.fit_resize_side(state.spec.input_shape[1]))
    probs, preds = _predict_all(state, data, args.batch)
    k5 = min(5, state.spec.num_classes)
    top1 = training.top_k_accuracy(probs, data.labels, 1)
    top5 = training.top_k_accuracy(probs, data.labels, k5)
    print(f"top1 {top1:.6f}")
    print(f"top5 {top5:.6f}")
    if args.log_predictions:
        analysis.write_predictions(list(zip(data.labels.tolist(), preds.tolist())),
                                   args.log_predictions)
        _status(f"prediction log: {args.log_predictions}")
    return 0


# ---------------------------------------------------------------------------
# predict

PREDICT_OPTS = [
    Opt("hierarchy-config", str, None, "two-level hierarchy config file"),
    Opt("model", str, None, "flat single-model weight file"),
]


def cmd_predict(args) -> int:
    if bool(args.hierarchy_config) == bool(args.model):
        raise ValueError("pass exactly one of --hierarchy-config or --model")
    if args.hierarchy_config:
        cfg = hierarchy.load_hierarchy_config(args.hierarchy_config)
        rec = hierarchy.PlaceRecognizer(cfg, base_dir=Path(args.hierarchy_config).parent)
    else:
        rec = hierarchy.PlaceRecognizer(hierarchy.HierarchyConfig(args.model, {}))
    failures = 0
    for image_path in args.images:
        try:
            img = imageio.decode_image(image_path)
            pred = rec.predict(img)
        except (ValueError, OSError) as e:
            _status(f"error: {image_path}: {e}")
            failures += 1
            continue
        top5 = " ".join(f"{name}:{conf:.4f}" for name, conf in pred.level1.top5)
        line = f"{image_path}\t{pred.composite_label}\t{pred.level1.confidence:.4f}\t{top5}"
        if pred.level2 is not None:
            sub5 = " ".join(f"{name}:{conf:.4f}" for name, conf in pred.level2.top5)
            line += f"\t{pred.level2.confidence:.4f}\t{sub5}"
        print(line)
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# cam

CAM_OPTS = [
    Opt("model", str, None, "weight file"),
    Opt("class", _parse_class, None, "class index to map, or argmax [default: argmax]"),
    Opt("alpha", float, 0.5, "overlay blend weight in [0, 1]"),
    Opt("out", str, None, "overlay PNG path"),
    Opt("raw-out", str, None, "also dump the raw activation grid as text here"),
]


def cmd_cam(args) -> int:
    _require(args, ["model", "out"])
    state = dsmodel.load(args.model)
    img = imageio.decode_image(args.image)
    side = state.spec.input_shape[1]
    pre = imageio.preprocess_for_model(img, side)
    mapped = cam.cam_for_image(state, pre.pixels, getattr(args, "class"))
    overlay = cam.render_overlay(pre, mapped, args.alpha)
    imageio.save_image(overlay.pixels, args.out)
    if args.raw_out:
        cam.write_raw_grid(mapped, args.raw_out)
    name = state.spec.class_names[mapped.class_index]
    _status(f"mapped class {mapped.class_index} ({name}); grid {mapped.raw.shape[0]}x"
            f"{mapped.raw.shape[1]}; overlay: {args.out}")
    return 0


# ---------------------------------------------------------------------------
# analyze

ANALYZE_OPTS = [
    Opt("predictions", str, None, "prediction log (`<true> <predicted>` lines)"),
    Opt("class-names", str, None, "class-name file: one name per line, or any manifest"),
    Opt("threshold", float, 0.0, "minimum pair score for a similarity-graph edge"),
    Opt("out-dir", str, None, "output directory"),
    Opt("model", str, None, "optional weight file for the first-layer filter grid"),
]


def _load_class_names(path) -> tuple[str, ...]:
    text = Path(path).read_text()
    if "#class " in text:
        return datasets.load_manifest(path).class_names
    return tuple(line.strip() for line in text.splitlines() if line.strip())


def cmd_analyze(args) -> int:
    _require(args, ["predictions", "class-names", "out-dir"])
    names = _load_class_names(args.class_names)
    records = analysis.load_predictions(args.predictions)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cm = analysis.build_confusion(records, len(names), names)
    mm = analysis.normalize_misclass(cm)
    pairs = analysis.rank_similar_pairs(mm)
    scores = analysis.distinctiveness(mm)

    with open(out_dir / "confusion_matrix.txt", "w") as f:
        f.write("# rows: true class; columns: predicted class\n")
        for row in cm.counts:
            f.write(" ".join(str(v) for v in row) + "\n")
    with open(out_dir / "misclass_matrix.txt", "w") as f:
        f.write("# row-normalized misclassification rates, zero diagonal\n")
        for row in mm.rates:
            f.write(" ".join(f"{v:.6f}" for v in row) + "\n")
    with open(out_dir / "similar_pairs.txt", "w") as f:
        f.write("# pair score, most similar first\n")
        for p in pairs:
            f.write(f"{names[p.a]}\t{names[p.b]}\t{p.score:.6f}\n")
    with open(out_dir / "distinctiveness.txt", "w") as f:
        f.write("# class fn_rate fp_rate confusion_sum, most distinctive first\n")
        for s in scores:
            f.write(f"{names[s.class_index]}\t{s.fn_rate:.6f}\t{s.fp_rate:.6f}\t"
                    f"{s.confusion_sum:.6f}\n")
    analysis.export_similarity_graph(pairs, names, args.threshold, out_dir / "similarity_graph")

    if args.model:
        state = dsmodel.load(args.model)
        first_kernels = None
        for key in sorted(state.params):
            if key.endswith(".kernels"):
                first_kernels = state.params[key]
                break
        if first_kernels is None or first_kernels.shape[1] != 3:
            raise ValueError("model has no RGB first-layer kernels to visualize")
        analysis.export_filter_grid(first_kernels, out_dir / "filter_grid.png")

    _status(f"analysis written under {out_dir}")
    return 0


# ---------------------------------------------------------------------------

_SUBCOMMANDS = {
    "synth": (cmd_synth, SYNTH_OPTS, "generate a procedural labeled dataset"),
    "prep": (cmd_prep, PREP_OPTS, "rescale, blur-filter, and split a dataset"),
    "train": (cmd_train, TRAIN_OPTS, "train a model and keep the best checkpoint"),
    "eval": (cmd_eval, EVAL_OPTS, "report top-1/top-5 accuracy on a manifest"),
    "predict": (cmd_predict, PREDICT_OPTS, "predict places for images, hierarchically"),
    "cam": (cmd_cam, CAM_OPTS, "render a class-activation overlay for one image"),
    "analyze": (cmd_analyze, ANALYZE_OPTS, "misclassification and similarity analysis"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepspace",
                                     description="indoor place recognition pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, opts, help_text) in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _add_opts(p, opts)
        if name == "predict":
            p.add_argument("images", nargs="+", help="image files to classify")
        elif name == "cam":
            p.add_argument("image", help="image file to map")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    func, opts, _ = _SUBCOMMANDS[args.command]
    try:
        _resolve(args, opts)
        return func(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary: report and exit nonzero
        _status(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
