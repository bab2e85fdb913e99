"""Still-image decode/encode, bilinear resize, and cropping.

Pixels travel as (3, H, W) float arrays in [0, 1]. Supported containers are
PNG and binary PPM (P6); both round-trip 8-bit RGB exactly. The pipeline
starts at still images: video capture and lens correction happen upstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tensor import Rng, Tensor


@dataclass
class ImageRecord:
    pixels: Tensor  # (3, H, W) float32 in [0, 1]
    source: str = ""

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


def decode_image(path) -> ImageRecord:
    """Read an 8-bit RGB raster. Non-RGB inputs (grayscale, palette, alpha)
    are rejected rather than silently converted."""
    try:
        with Image.open(path) as img:
            if img.mode != "RGB":
                raise ValueError(
                    f"{path}: expected an 8-bit RGB image, got mode {img.mode!r}"
                )
            arr = np.asarray(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise ValueError(f"{path}: cannot decode image ({e})") from e
    pixels = (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)
    return ImageRecord(np.ascontiguousarray(pixels), str(path))


def save_image(pixels: Tensor, path):
    """Write (3, H, W) [0, 1] pixels as PNG or PPM (by extension)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) pixels, got {pixels.shape}")
    u8 = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path)


def resize_planes(planes: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize over the last two axes, half-pixel-center convention:
    source coordinate of output pixel i is (i + 0.5) * in/out - 0.5, clamped.
    Constant inputs stay constant at any size."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    planes = np.asarray(planes)
    in_h, in_w = planes.shape[-2:]

    def axis_coords(n_in, n_out):
        c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        c = np.clip(c, 0.0, n_in - 1.0)
        i0 = np.minimum(np.floor(c).astype(np.int64), max(n_in - 2, 0))
        frac = c - i0
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, frac

    y0, y1, fy = axis_coords(in_h, out_h)
    x0, x1, fx = axis_coords(in_w, out_w)
    fy = fy[:, None]
    fx = fx[None, :]
    tl = planes[..., y0[:, None], x0[None, :]]
    tr = planes[..., y0[:, None], x1[None, :]]
    bl = planes[..., y1[:, None], x0[None, :]]
    br = planes[..., y1[:, None], x1[None, :]]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return (top + (bot - top) * fy).astype(planes.dtype, copy=False)


def resize_bilinear(img: ImageRecord, out_h: int, out_w: int) -> ImageRecord:
    return ImageRecord(resize_planes(img.pixels, out_h, out_w), img.source)


def crop(img: ImageRecord, mode: str, out_side: int = 227, rng: Rng | None = None) -> ImageRecord:
    """Square crop: "center" uses offset floor((side - out)/2); "random" draws
    both offsets uniformly from [0, side - out]."""
    h, w = img.height, img.width
    if out_side > h or out_side > w:
        raise ValueError(f"crop side {out_side} exceeds image size {h}x{w}")
    if mode == "center":
        dy, dx = (h - out_side) // 2, (w - out_side) // 2
    elif mode == "random":
        if rng is None:
            raise ValueError("random crop needs an Rng")
        dy = int(rng.integers(0, h - out_side + 1))
        dx = int(rng.integers(0, w - out_side + 1))
    else:
        raise ValueError(f"crop mode must be 'center' or 'random', got {mode!r}")
    return ImageRecord(
        np.ascontiguousarray(img.pixels[:, dy : dy + out_side, dx : dx + out_side]), img.source
    )


def fit_resize_side(input_side: int) -> int:
    """Pre-crop resolution for a given network input side, preserving the
    canonical 256:227 resize-to-crop ratio."""
    return max(input_side, round(input_side * 256 / 227))


def preprocess_for_model(img: ImageRecord, input_side: int) -> ImageRecord:
    """Evaluation-path preprocessing: resize to the fit side, center crop."""
    fit = fit_resize_side(input_side)
    return crop(resize_bilinear(img, fit, fit), "center", input_side)
