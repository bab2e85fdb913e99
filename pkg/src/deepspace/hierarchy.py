"""Two-level coarse-to-fine place prediction: a building-level model picks a
segment, and segments with a registered room-level model get refined within
it. Refinement triggers on the level-1 argmax only."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as dsmodel
from .imageio import ImageRecord, preprocess_for_model
from .model import ModelState
from .tensor import Tensor


@dataclass
class Route:
    model_path: str
    label_prefix: str | None = None  # defaults to the level-1 class name


@dataclass
class HierarchyConfig:
    level1: str  # level-1 model path
    routes: dict[int, Route] = field(default_factory=dict)
    min_confidence: float | None = None  # optional gate on level-1 confidence


def write_hierarchy_config(cfg: HierarchyConfig, path):
    lines = [f"level1 = {cfg.level1}"]
    if cfg.min_confidence is not None:
        lines.append(f"min_confidence = {cfg.min_confidence!r}")
    for idx in sorted(cfg.routes):
        lines.append(f"route.{idx} = {cfg.routes[idx].model_path}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_hierarchy_config(path) -> HierarchyConfig:
    level1 = None
    routes: dict[int, Route] = {}
    min_confidence = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "level1":
            level1 = value
        elif key == "min_confidence":
            min_confidence = float(value)
        elif key.startswith("route."):
            routes[int(key[6:])] = Route(value)
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    if level1 is None:
        raise ValueError(f"{path}: missing 'level1' entry")
    return HierarchyConfig(level1, routes, min_confidence)


@dataclass
class LevelPrediction:
    class_name: str
    confidence: float
    top5: list[tuple[str, float]]  # sorted descending, ties to lower index


@dataclass
class PlacePrediction:
    level1: LevelPrediction
    level2: LevelPrediction | None
    composite_label: str


def _rank(probs: Tensor, names, k: int) -> list[tuple[str, float]]:
    order = np.argsort(-probs, kind="stable")[:k]
    return [(names[i], float(probs[i])) for i in order]


def _predict_level(state: ModelState, img: ImageRecord) -> tuple[int, LevelPrediction]:
    side = state.spec.input_shape[1]
    x = preprocess_for_model(img, side).pixels
    probs, _, _ = dsmodel.forward(state, x)
    top = _rank(probs, state.spec.class_names, min(5, state.spec.num_classes))
    best = int(np.argsort(-probs, kind="stable")[0])
    return best, LevelPrediction(state.spec.class_names[best], float(probs[best]), top)


class PlaceRecognizer:
    """Loaded two-level predictor; models are read once and shared read-only."""

    def __init__(self, cfg: HierarchyConfig, base_dir=None):
        base = Path(base_dir) if base_dir is not None else Path(".")

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        self.cfg = cfg
        self.level1 = dsmodel.load(resolve(cfg.level1))
        n1 = self.level1.spec.num_classes
        if len(set(self.level1.spec.class_names)) != n1:
            raise ValueError("level-1 class names are not unique")
        self.routes: dict[int, tuple[ModelState, str]] = {}
        for idx, route in cfg.routes.items():
            if not 0 <= idx < n1:
                raise ValueError(f"route index {idx} is not a valid level-1 class")
            sub = dsmodel.load(resolve(route.model_path))
            if len(set(sub.spec.class_names)) != sub.spec.num_classes:
                raise ValueError(f"route {idx}: level-2 class names are not unique")
            prefix = route.label_prefix or self.level1.spec.class_names[idx]
            self.routes[idx] = (sub, prefix)

    def predict(self, img: ImageRecord) -> PlacePrediction:
        best, level1 = _predict_level(self.level1, img)
        refine = best in self.routes
        if refine and self.cfg.min_confidence is not None:
            refine = level1.confidence >= self.cfg.min_confidence
        if not refine:
            return PlacePrediction(level1, None, level1.class_name)
        sub, prefix = self.routes[best]
        _, level2 = _predict_level(sub, img)
        return PlacePrediction(level1, level2, f"{prefix}/{level2.class_name}")


def predict_place(recognizer: PlaceRecognizer, img: ImageRecord) -> PlacePrediction:
    return recognizer.predict(img)
