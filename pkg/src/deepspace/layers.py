"""Forward and backward passes for every network layer kind.

Spatial activations are (channels, height, width) arrays; every function also
accepts a leading batch axis and returns output of matching rank. Each forward
returns a single-use LayerCache; the paired backward consumes it and returns
the exact gradient of sum(dy * y) with respect to each input.

Convolution runs as patch-matrix (im2col) GEMM but matches the direct
quadruple-loop definition; pooling ties route the gradient to the first
maximum in row-major window order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Rng, Tensor


class LayerCache:
    """Single-use bag of forward state for one backward call."""

    __slots__ = ("kind", "_saved")

    def __init__(self, kind: str, **saved):
        self.kind = kind
        self._saved = saved

    def take(self) -> dict:
        if self._saved is None:
            raise RuntimeError(f"{self.kind} cache already consumed; rerun forward before backward")
        saved, self._saved = self._saved, None
        return saved


@dataclass
class ConvParams:
    kernels: Tensor  # (out_ch, in_ch, kh, kw)
    bias: Tensor  # (out_ch,)
    stride: int = 1
    pad: int = 0

    @property
    def out_ch(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_ch(self) -> int:
        return self.kernels.shape[1]


@dataclass
class LrnParams:
    n: int = 5  # channel neighborhood size, odd
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ValueError(f"lrn neighborhood must be odd and >= 1, got {self.n}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("lrn alpha and beta must be > 0")


def conv_out_size(in_size: int, kernel: int, stride: int, pad: int) -> int:
    out = (in_size + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise ValueError(
            f"non-positive output size for input {in_size}, kernel {kernel}, "
            f"stride {stride}, pad {pad}"
        )
    return out


def _as_batch(x: Tensor, rank: int):
    """Promote an unbatched array to batch-of-one; report whether we did."""
    x = np.asarray(x)
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ValueError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def _unbatch(y: Tensor, squeezed: bool) -> Tensor:
    return y[0] if squeezed else y


def _im2col(x: Tensor, kh: int, kw: int, stride: int, pad: int):
    """(N, C, H, W) -> patch matrix (N*OH*OW, C*kh*kw) plus geometry."""
    n, c, h, w = x.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (N, C, OH, OW, kh, kw) -> (N, OH, OW, C, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)
    return cols, oh, ow


def _col2im(dcols: Tensor, x_shape, kh: int, kw: int, stride: int, pad: int) -> Tensor:
    """Scatter-add patch-matrix gradients back onto the input grid."""
    n, c, h, w = x_shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    d6 = dcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    s = stride
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u : u + s * oh : s, v : v + s * ow : s] += d6[:, :, u, v]
    if pad:
        return dxp[:, :, pad : pad + h, pad : pad + w]
    return dxp


def conv_forward(x: Tensor, p: ConvParams):
    x4, squeezed = _as_batch(x, 3)
    n, c, h, w = x4.shape
    if c != p.in_ch:
        raise ValueError(f"input has {c} channels but kernels expect {p.in_ch}")
    o, _, kh, kw = p.kernels.shape
    cols, oh, ow = _im2col(x4, kh, kw, p.stride, p.pad)
    y = cols @ p.kernels.reshape(o, -1).T + p.bias
    y = np.ascontiguousarray(y.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))
    cache = LayerCache(
        "conv", cols=cols, x_shape=x4.shape, params=p, oh=oh, ow=ow, squeezed=squeezed
    )
    return _unbatch(y, squeezed), cache


def conv_backward(dy: Tensor, cache: LayerCache):
    s = cache.take()
    p: ConvParams = s["params"]
    dy4, _ = _as_batch(dy, 3)
    n = s["x_shape"][0]
    o, _, kh, kw = p.kernels.shape
    dym = np.ascontiguousarray(dy4.transpose(0, 2, 3, 1)).reshape(n * s["oh"] * s["ow"], o)
    dbias = dym.sum(axis=0)
    dkernels = (dym.T @ s["cols"]).reshape(p.kernels.shape)
    dcols = dym @ p.kernels.reshape(o, -1)
    dx = _col2im(dcols, s["x_shape"], kh, kw, p.stride, p.pad)
    return _unbatch(dx, s["squeezed"]), dkernels, dbias


def _check_pointwise(p: ConvParams, name: str):
    if p.kernels.shape[2:] != (1, 1) or p.stride != 1 or p.pad != 0:
        raise ValueError(f"{name} stage must use 1x1 kernels with stride 1 and pad 0")


def mlpconv_forward(x: Tensor, base: ConvParams, mlp1: ConvParams, mlp2: ConvParams):
    """Base convolution followed by a two-stage 1x1 micro-network, ReLU after each."""
    _check_pointwise(mlp1, "mlp1")
    _check_pointwise(mlp2, "mlp2")
    if mlp1.in_ch != base.out_ch or mlp2.in_ch != mlp1.out_ch:
        raise ValueError(
            f"channel chain broken: base out {base.out_ch} -> mlp1 in {mlp1.in_ch}, "
            f"mlp1 out {mlp1.out_ch} -> mlp2 in {mlp2.in_ch}"
        )
    y0, c0 = conv_forward(x, base)
    a0, r0 = relu_forward(y0)
    y1, c1 = conv_forward(a0, mlp1)
    a1, r1 = relu_forward(y1)
    y2, c2 = conv_forward(a1, mlp2)
    a2, r2 = relu_forward(y2)
    cache = LayerCache("mlpconv", stages=(c0, r0, c1, r1, c2, r2))
    return a2, cache


def mlpconv_backward(dy: Tensor, cache: LayerCache):
    """Returns (dx, (dk, db) for base, mlp1, mlp2)."""
    c0, r0, c1, r1, c2, r2 = cache.take()["stages"]
    d = relu_backward(dy, r2)
    d, dk2, db2 = conv_backward(d, c2)
    d = relu_backward(d, r1)
    d, dk1, db1 = conv_backward(d, c1)
    d = relu_backward(d, r0)
    dx, dk0, db0 = conv_backward(d, c0)
    return dx, (dk0, db0), (dk1, db1), (dk2, db2)


def relu_forward(x: Tensor):
    x = np.asarray(x)
    mask = x > 0
    return np.where(mask, x, x.dtype.type(0)), LayerCache("relu", mask=mask)


def relu_backward(dy: Tensor, cache: LayerCache) -> Tensor:
    mask = cache.take()["mask"]
    return np.where(mask, dy, np.asarray(dy).dtype.type(0))


def maxpool_forward(x: Tensor, window: int, stride: int):
    x4, squeezed = _as_batch(x, 3)
    n, c, h, w = x4.shape
    if window > h or window > w:
        raise ValueError(f"pooling window {window} larger than input {h}x{w}")
    win = sliding_window_view(x4, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(*win.shape[:4], window * window)
    idx = flat.argmax(axis=-1)  # first max in row-major window order
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    cache = LayerCache(
        "maxpool", idx=idx, x_shape=x4.shape, window=window, stride=stride, squeezed=squeezed
    )
    return _unbatch(np.ascontiguousarray(y), squeezed), cache


def maxpool_backward(dy: Tensor, cache: LayerCache) -> Tensor:
    s = cache.take()
    n, c, h, w = s["x_shape"]
    window, stride = s["window"], s["stride"]
    idx = s["idx"]
    dy4, _ = _as_batch(dy, 3)
    oh, ow = idx.shape[2], idx.shape[3]
    rows = (np.arange(oh) * stride)[None, None, :, None] + idx // window
    cols = (np.arange(ow) * stride)[None, None, None, :] + idx % window
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    lin = ((nn * c + cc) * h + rows) * w + cols
    dx = np.zeros(n * c * h * w, dtype=dy4.dtype)
    np.add.at(dx, lin.ravel(), dy4.ravel())
    return _unbatch(dx.reshape(n, c, h, w), s["squeezed"])


def gap_forward(x: Tensor):
    """Global average pooling: each channel collapses to its spatial mean."""
    x4, squeezed = _as_batch(x, 3)
    n, c, h, w = x4.shape
    y = x4.mean(axis=(2, 3))
    cache = LayerCache("gap", x_shape=x4.shape, squeezed=squeezed)
    return _unbatch(y, squeezed), cache


def gap_backward(dy: Tensor, cache: LayerCache) -> Tensor:
    s = cache.take()
    n, c, h, w = s["x_shape"]
    dy2, _ = _as_batch(dy, 1)
    dx = np.broadcast_to(dy2[:, :, None, None], (n, c, h, w)) / (h * w)
    return _unbatch(np.ascontiguousarray(dx.astype(dy2.dtype, copy=False)), s["squeezed"])


def fc_forward(x: Tensor, weight: Tensor, bias: Tensor):
    x2, squeezed = _as_batch(x, 1)
    m, k = weight.shape
    if x2.shape[1] != k:
        raise ValueError(f"fc expects {k} input features, got {x2.shape[1]}")
    if bias.shape != (m,):
        raise ValueError(f"fc bias shape {bias.shape} does not match {m} outputs")
    y = x2 @ weight.T + bias
    cache = LayerCache("fc", x=x2, weight=weight, squeezed=squeezed)
    return _unbatch(y, squeezed), cache


def fc_backward(dy: Tensor, cache: LayerCache):
    s = cache.take()
    dy2, _ = _as_batch(dy, 1)
    dx = dy2 @ s["weight"]
    dweight = dy2.T @ s["x"]
    dbias = dy2.sum(axis=0)
    return _unbatch(dx, s["squeezed"]), dweight, dbias


def dropout_forward(x: Tensor, rate: float, mode: str, rng: Rng | None = None):
    """Inverted dropout: train mode zeroes units with probability `rate` and
    scales survivors by 1/(1-rate); eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x)
    if mode == "eval" or rate == 0.0:
        return x, LayerCache("dropout", mask=None, scale=1.0)
    if rng is None:
        raise ValueError("train-mode dropout needs an Rng")
    mask = rng.uniform(0.0, 1.0, x.shape, dtype=np.float64) >= rate
    scale = 1.0 / (1.0 - rate)
    y = np.where(mask, x * x.dtype.type(scale), x.dtype.type(0))
    return y, LayerCache("dropout", mask=mask, scale=scale)


def dropout_backward(dy: Tensor, cache: LayerCache) -> Tensor:
    s = cache.take()
    dy = np.asarray(dy)
    if s["mask"] is None:
        return dy
    return np.where(s["mask"], dy * dy.dtype.type(s["scale"]), dy.dtype.type(0))


def _channel_window_sum(z: Tensor, n: int) -> Tensor:
    """Per-position sum of z over the channel window [c - n//2, c + n//2], clipped."""
    half = n // 2
    c = z.shape[1]
    cs = np.cumsum(z, axis=1)
    hi = np.minimum(np.arange(c) + half, c - 1)
    lo = np.arange(c) - half - 1
    out = cs[:, hi].copy()
    inside = lo >= 0
    if inside.any():
        out[:, inside] -= cs[:, lo[inside]]
    return out


def lrn_forward(x: Tensor, p: LrnParams):
    """Cross-channel response normalization:
    y[c] = x[c] / (k + (alpha/n) * sum_{|c'-c| <= n//2} x[c']^2) ** beta
    """
    x4, squeezed = _as_batch(x, 3)
    denom = p.k + (p.alpha / p.n) * _channel_window_sum(x4 * x4, p.n)
    y = x4 * denom ** (-p.beta)
    cache = LayerCache("lrn", x=x4, denom=denom, params=p, squeezed=squeezed)
    return _unbatch(y.astype(x4.dtype, copy=False), squeezed), cache


def lrn_backward(dy: Tensor, cache: LayerCache) -> Tensor:
    s = cache.take()
    p: LrnParams = s["params"]
    x, denom = s["x"], s["denom"]
    dy4, _ = _as_batch(dy, 3)
    # d y[c] / d x[j] = [c==j] * denom[c]^-beta
    #                 - (2 alpha beta / n) * x[c] * x[j] * denom[c]^(-beta-1)  for j in window(c)
    inner = _channel_window_sum(dy4 * x * denom ** (-p.beta - 1.0), p.n)
    dx = dy4 * denom ** (-p.beta) - (2.0 * p.alpha * p.beta / p.n) * x * inner
    return _unbatch(dx.astype(x.dtype, copy=False), s["squeezed"])


def softmax_probs(logits: Tensor) -> Tensor:
    """Numerically stable softmax along the last axis."""
    logits = np.asarray(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent_forward(logits: Tensor, label):
    """Softmax + cross-entropy. For batched logits the loss is the batch mean.

    Returns (loss, probs, cache).
    """
    logits2, squeezed = _as_batch(logits, 1)
    n, k = logits2.shape
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"label {bad} out of range for {k} classes")
    probs = softmax_probs(logits2)
    losses = -np.log(probs[np.arange(n), labels])
    loss = float(losses.mean())
    cache = LayerCache("softmax_xent", probs=probs, labels=labels, squeezed=squeezed)
    return loss, _unbatch(probs, squeezed), cache


def softmax_xent_backward(cache: LayerCache) -> Tensor:
    s = cache.take()
    probs, labels = s["probs"], s["labels"]
    n = probs.shape[0]
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    if not s["squeezed"]:
        d /= n  # gradient of the batch-mean loss
    return _unbatch(d, s["squeezed"])
