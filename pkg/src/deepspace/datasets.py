"""Dataset manifests, validation splits, array loading, and the procedural
indoor-scene generator used for desk-scale experiments.

Manifest files are line-oriented: header lines `#class <index> <name>` (and an
optional `#split <tag>`), then one `<relative-path> <label>` entry per line.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import decode_image, resize_bilinear, save_image
from .tensor import Rng, Tensor
from .training import Batches

TEXTURE_KINDS = ("stripes", "checker", "gradient", "blobs")


@dataclass
class DatasetManifest:
    root: Path
    entries: list[tuple[str, int]]  # (relative path, class index)
    class_names: tuple[str, ...]
    split: str = "train"  # train | val | test

    def __post_init__(self):
        self.root = Path(self.root)
        self.class_names = tuple(self.class_names)
        seen = set()
        for path, label in self.entries:
            if path in seen:
                raise ValueError(f"duplicate path in manifest: {path}")
            seen.add(path)
            if not 0 <= label < len(self.class_names):
                raise ValueError(f"label {label} out of range for {path}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def per_class_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for _, label in self.entries:
            counts[label] += 1
        return counts


def write_manifest(manifest: DatasetManifest, path):
    lines = [f"#split {manifest.split}"]
    for i, name in enumerate(manifest.class_names):
        lines.append(f"#class {i} {name}")
    for rel, label in manifest.entries:
        lines.append(f"{rel} {label}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    class_names: dict[int, str] = {}
    entries: list[tuple[str, int]] = []
    split = "train"
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#split "):
            split = line[len("#split "):].strip()
            continue
        if line.startswith("#class "):
            body = line[len("#class "):]
            try:
                idx_str, name = body.split(" ", 1)
                class_names[int(idx_str)] = name
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed class header {raw!r}") from None
            continue
        if line.startswith("#"):
            continue
        try:
            rel, label_str = line.rsplit(" ", 1)
            label = int(label_str)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: malformed entry {raw!r}") from None
        entries.append((rel, label))
    if sorted(class_names) != list(range(len(class_names))):
        raise ValueError(f"{path}: class indices are not dense 0..{len(class_names) - 1}")
    names = tuple(class_names[i] for i in range(len(class_names)))
    try:
        return DatasetManifest(path.parent, entries, names, split)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from None


def split_validation(manifest: DatasetManifest, per_class: int, rng: Rng):
    """Move exactly per_class seeded-random entries of every class to the
    validation manifest; order within each output follows the input."""
    by_class: dict[int, list[int]] = {c: [] for c in range(manifest.num_classes)}
    for i, (_, label) in enumerate(manifest.entries):
        by_class[label].append(i)
    val_idx: set[int] = set()
    for c in range(manifest.num_classes):
        idx = by_class[c]
        if len(idx) <= per_class:
            raise ValueError(
                f"class {manifest.class_names[c]!r} has {len(idx)} entries, "
                f"need more than {per_class} to split"
            )
        picks = rng.permutation(len(idx))[:per_class]
        val_idx.update(idx[p] for p in picks)
    train_entries = [e for i, e in enumerate(manifest.entries) if i not in val_idx]
    val_entries = [e for i, e in enumerate(manifest.entries) if i in val_idx]
    train = DatasetManifest(manifest.root, train_entries, manifest.class_names, "train")
    val = DatasetManifest(manifest.root, val_entries, manifest.class_names, "val")
    return train, val


def load_images(manifest: DatasetManifest, side: int) -> Batches:
    """Decode every entry, resize to side x side, and pack as uint8 arrays
    (cast back to float per batch at train/eval time)."""
    n = len(manifest.entries)
    if n == 0:
        raise ValueError("manifest has no entries")
    images = np.empty((n, 3, side, side), dtype=np.uint8)
    labels = np.empty(n, dtype=np.int64)
    for i, (rel, label) in enumerate(manifest.entries):
        rec = decode_image(manifest.root / rel)
        if rec.height != side or rec.width != side:
            rec = resize_bilinear(rec, side, side)
        images[i] = np.clip(np.rint(rec.pixels * 255.0), 0, 255).astype(np.uint8)
        labels[i] = label
    return Batches(images, labels)


def channel_mean(batch: Batches) -> Tensor:
    """Per-channel mean pixel value in [0, 1] over a loaded dataset."""
    images = batch.images
    if images.dtype == np.uint8:
        images = images.astype(np.float32) / 255.0
    return images.mean(axis=(0, 2, 3)).astype(np.float32)


# ---------------------------------------------------------------------------
# Procedural scene generator


@dataclass
class SceneRecipe:
    """Per-class rendering recipe; the class signature the model must learn."""

    name: str
    color_a: tuple[float, float, float]
    color_b: tuple[float, float, float]
    texture: str
    scale: float
    angle: float
    blob_centers: np.ndarray | None = None  # (K, 2) unit coords, blobs only

    def to_text(self) -> str:
        lines = [
            f"name = {self.name}",
            f"color_a = {self.color_a[0]:.4f},{self.color_a[1]:.4f},{self.color_a[2]:.4f}",
            f"color_b = {self.color_b[0]:.4f},{self.color_b[1]:.4f},{self.color_b[2]:.4f}",
            f"texture = {self.texture}",
            f"scale = {self.scale:.4f}",
            f"angle = {self.angle:.4f}",
        ]
        if self.blob_centers is not None:
            pts = ";".join(f"{x:.4f},{y:.4f}" for x, y in self.blob_centers)
            lines.append(f"blob_centers = {pts}")
        return "\n".join(lines) + "\n"


_LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _luma(rgb) -> float:
    return sum(w * c for w, c in zip(_LUMA_WEIGHTS, rgb))


def _class_recipe(index: int, side: int, rng: Rng, prefix: str = "zone") -> SceneRecipe:
    # Golden-ratio hue spacing keeps any number of classes far apart in color.
    h1 = (index * 0.61803398875) % 1.0
    h2 = (h1 + 0.33 + 0.1 * (index % 3)) % 1.0
    s1 = 0.55 + 0.3 * ((index * 3) % 4) / 4
    v1 = 0.55 + 0.35 * ((index * 5) % 3) / 3
    color_a = colorsys.hsv_to_rgb(h1, s1, v1)
    # Pick the second color so the pair contrasts strongly in luma, not just
    # in hue; luma-flat edges are invisible to the wavelet sharpness filter.
    candidates = [
        colorsys.hsv_to_rgb(h2, s, v)
        for s in (0.35, 0.6, 0.85)
        for v in (0.06, 0.2, 0.4, 0.6, 0.8, 0.97)
    ]
    color_b = max(candidates, key=lambda c: abs(_luma(c) - _luma(color_a)))
    texture = TEXTURE_KINDS[index % len(TEXTURE_KINDS)]
    scale = side / 8 + (index % 5) * side / 32
    angle = float(rng.uniform(0.0, math.pi, (), dtype=np.float64))
    blob_centers = None
    if texture == "blobs":
        k = 4 + index % 3
        blob_centers = rng.uniform(0.0, 1.0, (k, 2), dtype=np.float64)
    return SceneRecipe(f"{prefix}_{index:02d}", color_a, color_b, texture,
                       scale, angle, blob_centers)


def _render_scene(recipe: SceneRecipe, side: int, shift: tuple[float, float],
                  oversample: int = 1) -> Tensor:
    coords = (np.arange(side * oversample, dtype=np.float64) + 0.5) / oversample - 0.5
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    dy, dx = shift
    ca = np.array(recipe.color_a)[:, None, None]
    cb = np.array(recipe.color_b)[:, None, None]
    if recipe.texture == "stripes":
        t = ((xx + dx) * math.cos(recipe.angle) + (yy + dy) * math.sin(recipe.angle)) / recipe.scale
        mask = np.floor(t).astype(np.int64) % 2
        blend = mask.astype(np.float64)
    elif recipe.texture == "checker":
        mask = (np.floor((xx + dx) / recipe.scale) + np.floor((yy + dy) / recipe.scale)) % 2
        blend = mask.astype(np.float64)
    elif recipe.texture == "gradient":
        # Ramp period of 4 image sides: gentle enough that the color drift
        # stays below the sharpness filter's edge threshold at every scale.
        t = ((xx + dx) * math.cos(recipe.angle) + (yy + dy) * math.sin(recipe.angle)) / (side * 4.0)
        blend = 0.5 - 0.35 * np.cos(2 * math.pi * t)
        out = ca + (cb - ca) * blend[None]
        # tile seams: the crisp microstructure real surfaces have (and the
        # wavelet sharpness filter expects), on top of the color ramp
        seams = (np.floor(xx + dx) % recipe.scale < 2) | (np.floor(yy + dy) % recipe.scale < 2)
        return np.where(seams[None], np.maximum(out - 0.4, 0.0), out)
    else:  # blobs
        pts = recipe.blob_centers
        px = (xx / side + dx / side) % 1.0
        py = (yy / side + dy / side) % 1.0
        r2 = (2.0 * recipe.scale / side) ** 2
        fieldsum = np.zeros(xx.shape)
        for cx, cy in pts:
            # torus distance keeps blobs whole under viewpoint wrap
            ddx = np.minimum(np.abs(px - cx), 1.0 - np.abs(px - cx))
            ddy = np.minimum(np.abs(py - cy), 1.0 - np.abs(py - cy))
            fieldsum += np.exp(-(ddx * ddx + ddy * ddy) / r2)
        blend = (fieldsum > 0.5).astype(np.float64)  # hard outline
    return ca + (cb - ca) * blend[None]


_OVERSAMPLE = 2  # render at 2x and box-average: camera-like antialiased edges


def _render_image(recipe: SceneRecipe, side: int, rng: Rng) -> Tensor:
    shift = (
        float(rng.uniform(0.0, side, (), dtype=np.float64)),
        float(rng.uniform(0.0, side, (), dtype=np.float64)),
    )
    os_ = _OVERSAMPLE
    pixels = _render_scene(recipe, side, shift, oversample=os_)
    if float(rng.uniform(0.0, 1.0, (), dtype=np.float64)) < 0.2:
        # occluding rectangle up to a quarter of the view
        rw = int(rng.integers(side // 8, side // 4 + 1))
        rh = int(rng.integers(side // 8, side // 4 + 1))
        ry = int(rng.integers(0, side - rh + 1))
        rx = int(rng.integers(0, side - rw + 1))
        tone = float(rng.uniform(0.1, 0.9, (), dtype=np.float64))
        pixels[:, ry * os_ : (ry + rh) * os_, rx * os_ : (rx + rw) * os_] = tone
    pixels = pixels.reshape(3, side, os_, side, os_).mean(axis=(2, 4))
    brightness = float(rng.uniform(0.8, 1.2, (), dtype=np.float64))
    pixels = pixels * brightness
    noise_sd = float(rng.uniform(0.005, 0.03, (), dtype=np.float64))
    pixels = pixels + rng.gaussian(0.0, noise_sd, pixels.shape, dtype=np.float64)
    return np.clip(pixels, 0.0, 1.0)


def synth_generate(num_classes: int, per_class: int, out_dir, image_side: int,
                   rng: Rng, name_prefix: str = "zone") -> DatasetManifest:
    """Render a labeled procedural dataset under out_dir and write its manifest.

    Every class gets a distinct color/texture recipe (logged as a key = value
    sidecar next to its images); every image randomizes viewpoint shift,
    brightness (within 20%), sensor noise, and occasional occluders.
    Deterministic given the rng seed, down to the PNG bytes.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ValueError(f"cannot create output directory {out_dir}: {e}") from e

    entries: list[tuple[str, int]] = []
    names: list[str] = []
    digits = max(4, len(str(per_class - 1)))
    for c in range(num_classes):
        recipe = _class_recipe(c, image_side, rng, name_prefix)
        names.append(recipe.name)
        class_dir = out_dir / recipe.name
        class_dir.mkdir(exist_ok=True)
        (class_dir / "recipe.txt").write_text(recipe.to_text())
        for i in range(per_class):
            rel = f"{recipe.name}/img_{i:0{digits}d}.png"
            save_image(_render_image(recipe, image_side, rng), out_dir / rel)
            entries.append((rel, c))
    manifest = DatasetManifest(out_dir, entries, tuple(names), "train")
    write_manifest(manifest, out_dir / "manifest.txt")
    return manifest
