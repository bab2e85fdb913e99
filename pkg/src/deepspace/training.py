"""Minibatch SGD with momentum, step-decayed learning rate, top-k metrics,
and the epoch loop with periodic validation and best-checkpoint selection.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import model as dsmodel
from .model import ModelState
from .tensor import Rng, Tensor, dtype_for


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    decay_factor: float = 0.5  # multiplied in every decay_every iterations
    decay_every: int = 2000
    momentum: float = 0.9
    batch_size: int = 64
    max_iterations: int = 10_000
    seed: int = 0
    precision: str = "single"  # "single" | "double"
    eval_every: int = 200
    stop_at_top1: float | None = None  # stop early once validation top-1 reaches this
    wall_clock: bool = True  # False writes 0.0 in the seconds column (reproducible reports)

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be > 0")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        dtype_for(self.precision)


@dataclass
class EvalPoint:
    iteration: int
    loss: float
    top1: float
    top5: float
    lr: float
    seconds: float


@dataclass
class TrainReport:
    points: list[EvalPoint] = field(default_factory=list)

    CSV_HEADER = "iteration,loss,top1,top5,lr,seconds"

    def best_top1(self) -> float:
        return max((p.top1 for p in self.points), default=0.0)

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for p in self.points:
            lines.append(
                f"{p.iteration},{p.loss:.6f},{p.top1:.6f},{p.top5:.6f},{p.lr:.6e},{p.seconds:.3f}"
            )
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.to_csv())


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    """Step decay: base_lr * decay_factor ** floor(iteration / decay_every)."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return cfg.base_lr * cfg.decay_factor ** (iteration // cfg.decay_every)


def sgd_step(params, grads, velocities, lr: float, momentum: float):
    """One momentum update per tensor: v <- momentum*v - lr*g; p <- p + v.

    Updates params and velocities in place and returns them.
    """
    if params.keys() != grads.keys() or params.keys() != velocities.keys():
        raise ValueError("params, grads, and velocities must share the same keys")
    for name in params:
        p, g, v = params[name], grads[name], velocities[name]
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(
                f"shape mismatch for {name!r}: param {p.shape}, grad {g.shape}, velocity {v.shape}"
            )
        v *= momentum
        v -= lr * g.astype(v.dtype, copy=False)
        p += v
    return params, velocities


def top_k_accuracy(probs_batch: Tensor, labels, k: int) -> float:
    """Fraction of rows whose label is among the k most probable classes.

    Probability ties rank the lower class index first.
    """
    probs_batch = np.atleast_2d(np.asarray(probs_batch))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, classes = probs_batch.shape
    if not 1 <= k <= classes:
        raise ValueError(f"k must be in [1, {classes}], got {k}")
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    ranked = np.argsort(-probs_batch, axis=1, kind="stable")[:, :k]
    return float((ranked == labels[:, None]).any(axis=1).mean())


@dataclass
class Batches:
    """Cropped, dtype-cast views of a dataset ready for the network.

    `images` holds the full-resolution (pre-crop) pixel data; crops to the
    model's input side happen per batch: random offsets during training,
    the centered window for evaluation.
    """

    images: Tensor  # (N, 3, S, S) uint8 or float
    labels: Tensor  # (N,)

    def __len__(self):
        return self.images.shape[0]


def _crop_batch(images: Tensor, idx, side: int, offsets, dtype) -> Tensor:
    out = np.empty((len(idx), images.shape[1], side, side), dtype=dtype)
    for row, (i, (dy, dx)) in enumerate(zip(idx, offsets)):
        out[row] = images[i, :, dy : dy + side, dx : dx + side]
    if images.dtype == np.uint8:
        out /= 255.0
    return out


def _center_offsets(src: int, side: int, count: int):
    off = (src - side) // 2
    return [(off, off)] * count


def evaluate(state: ModelState, data: Batches, batch_size: int = 64):
    """Center-crop evaluation. Returns (top1, top5, mean loss); k caps at the
    class count for small heads."""
    side = state.spec.input_shape[1]
    src = data.images.shape[2]
    dtype = state.params[next(iter(state.params))].dtype
    k5 = min(5, state.spec.num_classes)
    hits1 = hits5 = 0
    loss_sum = 0.0
    n = len(data)
    for start in range(0, n, batch_size):
        idx = range(start, min(start + batch_size, n))
        x = _crop_batch(data.images, idx, side, _center_offsets(src, side, len(idx)), dtype)
        y = data.labels[start : start + batch_size]
        probs, _, _ = dsmodel.forward(state, x)
        hits1 += top_k_accuracy(probs, y, 1) * len(idx)
        hits5 += top_k_accuracy(probs, y, k5) * len(idx)
        loss_sum += dsmodel.loss_from_probs(probs, y) * len(idx)
    return hits1 / n, hits5 / n, loss_sum / n


def train(state: ModelState, train_set: Batches, val_set: Batches, cfg: TrainConfig):
    """Seeded epoch loop. Returns (best-validation state, TrainReport).

    Epoch order, crop offsets, and dropout masks all derive from cfg.seed, so
    a rerun with the same config and data reproduces the report exactly
    (bit-exactly in double precision).
    """
    spec = state.spec
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("datasets must be non-empty")
    for name, ds in (("train", train_set), ("val", val_set)):
        if ds.labels.min() < 0 or ds.labels.max() >= spec.num_classes:
            raise ValueError(f"{name} set has labels outside [0, {spec.num_classes})")
    side = spec.input_shape[1]
    src = train_set.images.shape[2]
    if src < side:
        raise ValueError(f"dataset resolution {src} is below the model input side {side}")

    dtype = dtype_for(cfg.precision)
    params = {k: v.astype(dtype, copy=True) for k, v in state.params.items()}
    state = ModelState(spec, params, "train", state.channel_mean)
    velocities = {k: np.zeros_like(v) for k, v in params.items()}
    rng = Rng(cfg.seed)
    t0 = time.monotonic()

    def elapsed():
        return time.monotonic() - t0 if cfg.wall_clock else 0.0

    report = TrainReport()
    best_top1 = -1.0
    best_params = None

    def record(iteration: int, mean_loss: float) -> bool:
        nonlocal best_top1, best_params
        eval_state = state.with_mode("eval")
        top1, top5, _ = evaluate(eval_state, val_set)
        report.points.append(
            EvalPoint(iteration, mean_loss, top1, top5, lr_at(cfg, iteration), elapsed())
        )
        if top1 > best_top1:
            best_top1 = top1
            best_params = {k: v.copy() for k, v in params.items()}
        return cfg.stop_at_top1 is not None and top1 >= cfg.stop_at_top1

    # Baseline row: loss of the untouched model on the first training batch.
    first = range(0, min(cfg.batch_size, len(train_set)))
    x0 = _crop_batch(train_set.images, first, side, _center_offsets(src, side, len(first)), dtype)
    probs0, _, _ = dsmodel.forward(state.with_mode("eval"), x0)
    stop = record(0, dsmodel.loss_from_probs(probs0, train_set.labels[: len(first)]))

    it = 0
    loss_acc, loss_n = 0.0, 0
    crop_range = src - side + 1
    while it < cfg.max_iterations and not stop:
        perm = rng.permutation(len(train_set))
        for start in range(0, len(perm), cfg.batch_size):
            if it >= cfg.max_iterations or stop:
                break
            idx = perm[start : start + cfg.batch_size]
            offsets = rng.integers(0, crop_range, (len(idx), 2))
            x = _crop_batch(train_set.images, idx, side, offsets, dtype)
            y = train_set.labels[idx]
            probs, _, caches = dsmodel.forward(state, x, rng)
            loss = dsmodel.loss_from_probs(probs, y)
            grads = dsmodel.backward(state, caches, y)
            sgd_step(params, grads, velocities, lr_at(cfg, it), cfg.momentum)
            it += 1
            loss_acc += loss
            loss_n += 1
            if it % cfg.eval_every == 0:
                stop = record(it, loss_acc / loss_n)
                loss_acc, loss_n = 0.0, 0
    if loss_n or (it and report.points[-1].iteration != it):
        record(it, loss_acc / loss_n if loss_n else report.points[-1].loss)

    best = ModelState(spec, best_params, "eval", state.channel_mean)
    return best, report
