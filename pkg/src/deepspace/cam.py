"""Class activation maps: weight the final feature maps by a class's head
weights, upsample to input resolution, and render heatmap overlays.

Works for this architecture because global average pooling feeds the head
directly: each head weight multiplies one feature map's spatial mean, so the
same weights combine the maps pixel by pixel. The head bias is excluded; a
spatially constant offset cannot move the discriminative regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import ImageRecord, resize_planes
from .model import ModelState, fc_head_weights, forward
from .tensor import Tensor


@dataclass
class CamMap:
    raw: Tensor  # (s, s) activation grid on the final conv layer
    weights: Tensor  # (k,) head weight vector of the mapped class
    class_index: int
    upsampled: Tensor | None = None  # (H, W) at network input resolution


def compute_cam(feature_maps: Tensor, fc_weights: Tensor, class_index: int) -> CamMap:
    """Weighted sum of feature maps for one class.

    feature_maps: (k, s, s); fc_weights: (classes, k). Accumulates over the
    channel axis in fixed ascending order so results are bit-reproducible.
    """
    feature_maps = np.asarray(feature_maps)
    fc_weights = np.asarray(fc_weights)
    if feature_maps.ndim != 3:
        raise ValueError(f"expected (k, s, s) feature maps, got {feature_maps.shape}")
    classes, k = fc_weights.shape
    if feature_maps.shape[0] != k:
        raise ValueError(
            f"feature maps have {feature_maps.shape[0]} channels, head expects {k}"
        )
    if not 0 <= class_index < classes:
        raise ValueError(f"class index {class_index} out of range for {classes} classes")
    w = fc_weights[class_index]
    raw = np.zeros(feature_maps.shape[1:], dtype=feature_maps.dtype)
    for ch in range(k):
        raw += w[ch] * feature_maps[ch]
    return CamMap(raw=raw, weights=w.copy(), class_index=class_index)


def upsample_bilinear(raw: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear upsample of the activation grid (same convention as image
    resizing elsewhere)."""
    raw = np.asarray(raw)
    if out_h < raw.shape[0] or out_w < raw.shape[1]:
        raise ValueError(f"target {out_h}x{out_w} is smaller than the grid {raw.shape}")
    return resize_planes(raw, out_h, out_w)


def cam_for_image(state: ModelState, x: Tensor, class_index: int | None = None) -> CamMap:
    """Forward one preprocessed image and map the requested class (argmax when
    None), upsampled to the network input size."""
    probs, feature_maps, _ = forward(state, x)
    if class_index is None:
        class_index = int(np.argmax(probs))
    cam = compute_cam(feature_maps, fc_head_weights(state), class_index)
    side = state.spec.input_shape[1]
    cam.upsampled = upsample_bilinear(cam.raw, side, state.spec.input_shape[2])
    return cam


def _normalize_unit(grid: Tensor) -> Tensor:
    lo, hi = float(grid.min()), float(grid.max())
    if hi == lo:
        return np.full_like(grid, 0.5)  # flat map pins to mid-scale
    return (grid - lo) / (hi - lo)


# Three-anchor ramp: cold blue through green to hot red.
_RAMP_ANCHORS = (
    np.array([0.0, 0.0, 1.0]),
    np.array([0.0, 1.0, 0.0]),
    np.array([1.0, 0.0, 0.0]),
)


def heat_ramp(t: Tensor) -> Tensor:
    """Map values in [0, 1] to (3, ...) RGB through the blue-green-red ramp."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    lo, mid, hi = _RAMP_ANCHORS
    first = 2.0 * t
    second = 2.0 * t - 1.0
    cold = lo[:, None, None] + (mid - lo)[:, None, None] * first[None]
    hot = mid[:, None, None] + (hi - mid)[:, None, None] * second[None]
    return np.where(t[None] <= 0.5, cold, hot)


def render_overlay(img: ImageRecord, cam: CamMap, alpha: float) -> ImageRecord:
    """Blend the min-max-normalized heatmap over the image:
    out = (1 - alpha) * img + alpha * ramp(cam)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if cam.upsampled is None:
        raise ValueError("cam has no upsampled grid; upsample it first")
    if cam.upsampled.shape != (img.height, img.width):
        raise ValueError(
            f"cam grid {cam.upsampled.shape} does not match image {img.height}x{img.width}"
        )
    heat = heat_ramp(_normalize_unit(cam.upsampled))
    out = (1.0 - alpha) * img.pixels.astype(np.float64) + alpha * heat
    return ImageRecord(np.clip(out, 0.0, 1.0).astype(np.float32), img.source)


def write_raw_grid(cam: CamMap, path):
    """Dump the raw activation grid as a plain-text table for inspection."""
    with open(path, "w") as f:
        for row in cam.raw:
            f.write(" ".join(f"{v:.6f}" for v in row) + "\n")
