"""Wavelet-edge sharpness scoring for frame filtering.

A three-level Haar decomposition of the luma plane yields per-level edge maps
E_i = sqrt(LH_i^2 + HL_i^2 + HH_i^2). Non-overlapping windows (8/4/2 pixels at
levels 1/2/3, all covering the same image area) take per-window maxima, and
each window is classified by how edge energy moves across scales:

  * Dirac / A-step:  Emax1 > Emax2 > Emax3   (sharp structure)
  * Roof / G-step:   rising toward coarse scales, or peaking at level 2

A Roof/G-step edge whose level-1 maximum falls below the edge threshold has
lost its fine detail, i.e. it is likely blurred. The blur extent is the
fraction of Roof/G-step edges that are likely blurred, and the sharpness
indicator reported here is 1 - blur extent, so larger means sharper. Images
with no Roof/G-step edges at all (hard-edged textures, constant frames) score
1.0: the filter only targets blur, not lack of content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import ImageRecord
from .tensor import Tensor

# Edge threshold on Haar edge magnitudes; 35 on the 8-bit scale.
DEFAULT_EDGE_THRESHOLD = 35.0 / 255.0
DEFAULT_SHARPNESS_THRESHOLD = 0.45

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class BlurVerdict:
    indicator: float  # in [0, 1]; larger is sharper
    is_sharp: bool  # indicator >= threshold


def _haar2d(a: Tensor):
    """One orthonormal 2D Haar step: returns (LL, LH, HL, HH) at half size."""
    tl = a[0::2, 0::2]
    tr = a[0::2, 1::2]
    bl = a[1::2, 0::2]
    br = a[1::2, 1::2]
    ll = (tl + tr + bl + br) / 2.0
    lh = (tl + tr - bl - br) / 2.0
    hl = (tl - tr + bl - br) / 2.0
    hh = (tl - tr - bl + br) / 2.0
    return ll, lh, hl, hh


def _window_max(e: Tensor, size: int) -> Tensor:
    rows, cols = e.shape[0] // size, e.shape[1] // size
    return e[: rows * size, : cols * size].reshape(rows, size, cols, size).max(axis=(1, 3))


def blur_indicator(
    img: ImageRecord,
    threshold: float = DEFAULT_SHARPNESS_THRESHOLD,
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
) -> BlurVerdict:
    """Score one image; is_sharp is indicator >= threshold (default 0.45)."""
    h, w = img.height, img.width
    if h < 8 or w < 8:
        raise ValueError(f"image {h}x{w} too small for blur analysis (need >= 8x8)")
    luma = np.tensordot(_LUMA, img.pixels.astype(np.float64), axes=1)

    # Pad (edge replication, which adds no new edges) so three halvings land
    # on whole windows.
    ph = (-h) % 16
    pw = (-w) % 16
    if ph or pw:
        luma = np.pad(luma, ((0, ph), (0, pw)), mode="edge")

    ll = luma
    emax = []
    for level, win in ((1, 8), (2, 4), (3, 2)):
        ll, lh, hl, hh = _haar2d(ll)
        edge = np.sqrt(lh * lh + hl * hl + hh * hh)
        emax.append(_window_max(edge, win))
    e1, e2, e3 = emax

    is_edge = (e1 > edge_threshold) | (e2 > edge_threshold) | (e3 > edge_threshold)
    roof_gstep = is_edge & (((e1 < e2) & (e2 < e3)) | ((e2 > e1) & (e2 > e3)))
    likely_blurred = roof_gstep & (e1 < edge_threshold)

    total = int(roof_gstep.sum())
    blur_extent = float(likely_blurred.sum()) / total if total else 0.0
    indicator = 1.0 - blur_extent
    return BlurVerdict(indicator=indicator, is_sharp=indicator >= threshold)
