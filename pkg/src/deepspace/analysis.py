"""Misclassification analysis: confusion matrix, row-normalized error rates,
pairwise place similarity, distinctiveness ranking, similarity-graph export,
and the first-layer filter-grid visualization.

Similarity of places (A, B) is the symmetric sum of the rate at which A is
taken for B and B for A. A place's distinctiveness is the inverse ordering of
its total confusion (false-negative rate plus false-positive rate): a place
confused with nothing is maximally distinctive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import save_image
from .tensor import Tensor


@dataclass
class ConfusionMatrix:
    counts: Tensor  # (n, n) int64; rows = true class, columns = predicted
    class_names: tuple[str, ...]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass
class MisclassMatrix:
    rates: Tensor  # (n, n) float64, rows normalized, zero diagonal
    class_names: tuple[str, ...]


@dataclass(frozen=True)
class SimilarityPair:
    a: int  # a < b
    b: int
    score: float  # rates[a][b] + rates[b][a], in [0, 2]


@dataclass(frozen=True)
class DistinctivenessScore:
    class_index: int
    fn_rate: float  # how often this class is taken for others
    fp_rate: float  # how often others are taken for this class
    confusion_sum: float  # fn + fp; lower means more distinctive


def build_confusion(predictions, n: int, class_names=None) -> ConfusionMatrix:
    """Tally (true, predicted) pairs into an n x n count matrix."""
    names = tuple(class_names) if class_names is not None else tuple(
        f"class_{i:02d}" for i in range(n)
    )
    if len(names) != n:
        raise ValueError(f"{len(names)} class names for {n} classes")
    counts = np.zeros((n, n), dtype=np.int64)
    for t, p in predictions:
        if not (0 <= t < n and 0 <= p < n):
            raise ValueError(f"prediction pair ({t}, {p}) out of range for {n} classes")
        counts[t, p] += 1
    return ConfusionMatrix(counts, names)


def normalize_misclass(cm: ConfusionMatrix) -> MisclassMatrix:
    """Row-normalize the confusion matrix, then zero the diagonal: cell (i, j)
    is the rate at which class i is taken for class j."""
    row_sums = cm.counts.sum(axis=1)
    for i, s in enumerate(row_sums):
        if s == 0:
            raise ValueError(f"class {cm.class_names[i]!r} has no evaluated samples")
    rates = cm.counts.astype(np.float64) / row_sums[:, None]
    np.fill_diagonal(rates, 0.0)
    return MisclassMatrix(rates, cm.class_names)


def rank_similar_pairs(mm: MisclassMatrix) -> list[SimilarityPair]:
    """All unordered class pairs scored by mutual confusion, most similar
    first; ties break lexicographically on (a, b)."""
    n = len(mm.class_names)
    pairs = [
        SimilarityPair(a, b, float(mm.rates[a, b] + mm.rates[b, a]))
        for a in range(n)
        for b in range(a + 1, n)
    ]
    return sorted(pairs, key=lambda p: (-p.score, p.a, p.b))


def distinctiveness(mm: MisclassMatrix) -> list[DistinctivenessScore]:
    """Per-class total confusion, most distinctive (lowest) first."""
    fn = mm.rates.sum(axis=1)
    fp = mm.rates.sum(axis=0)
    scores = [
        DistinctivenessScore(c, float(fn[c]), float(fp[c]), float(fn[c] + fp[c]))
        for c in range(len(mm.class_names))
    ]
    return sorted(scores, key=lambda s: (s.confusion_sum, s.class_index))


def load_predictions(path) -> list[tuple[int, int]]:
    """Read `<true-index> <predicted-index>` lines."""
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected '<true> <predicted>', got {raw!r}")
        out.append((int(parts[0]), int(parts[1])))
    return out


def write_predictions(predictions, path):
    with open(path, "w") as f:
        for t, p in predictions:
            f.write(f"{t} {p}\n")


def export_similarity_graph(pairs, class_names, threshold: float, out_base) -> list[Path]:
    """Write the similarity graph twice: a JSON object (nodes, weighted edges)
    and a Graphviz DOT file. Edges keep pairs scoring >= threshold."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    out_base = Path(out_base)
    kept = [p for p in pairs if p.score >= threshold and p.score > 0]

    json_path = out_base.with_suffix(".json")
    payload = {
        "nodes": list(class_names),
        "edges": [
            {"a": class_names[p.a], "b": class_names[p.b], "weight": round(p.score, 6)}
            for p in kept
        ],
    }
    json_path.write_text(json.dumps(payload, indent=2) + "\n")

    dot_path = out_base.with_suffix(".dot")
    lines = ["graph similarity {"]
    for name in class_names:
        lines.append(f'  "{name}";')
    for p in kept:
        lines.append(
            f'  "{class_names[p.a]}" -- "{class_names[p.b]}" [weight={p.score:.6f}];'
        )
    lines.append("}")
    dot_path.write_text("\n".join(lines) + "\n")
    return [json_path, dot_path]


def filter_grid_image(kernels: Tensor, columns: int = 12) -> Tensor:
    """Tile first-layer kernels as an RGB image: each kernel min-max
    normalized on its own, 1-pixel black separators, 12 columns for the
    stock 96-kernel bank (rows follow from the count)."""
    kernels = np.asarray(kernels)
    if kernels.ndim != 4 or kernels.shape[1] != 3:
        raise ValueError(f"expected (n, 3, kh, kw) kernels, got {kernels.shape}")
    n, _, kh, kw = kernels.shape
    columns = min(columns, n)
    rows = (n + columns - 1) // columns
    height = rows * kh + rows + 1
    width = columns * kw + columns + 1
    grid = np.zeros((3, height, width), dtype=np.float32)
    for i in range(n):
        r, c = divmod(i, columns)
        tile = kernels[i].astype(np.float64)
        lo, hi = tile.min(), tile.max()
        tile = np.full_like(tile, 0.5) if hi == lo else (tile - lo) / (hi - lo)
        y = 1 + r * (kh + 1)
        x = 1 + c * (kw + 1)
        grid[:, y : y + kh, x : x + kw] = tile
    return grid


def export_filter_grid(kernels: Tensor, path, columns: int = 12) -> Tensor:
    grid = filter_grid_image(kernels, columns)
    save_image(grid, path)
    return grid
