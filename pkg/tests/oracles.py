"""Independent reference implementations used as test oracles.

Everything here is written the slow, obvious way (explicit loops, direct
formulas) and stays independent of the library code it checks.
"""

import numpy as np


def conv2d_direct(x, kernels, bias, stride, pad):
    """Quadruple-nested-loop convolution. x: (C,H,W), kernels: (O,C,kh,kw)."""
    c, h, w = x.shape
    o, _, kh, kw = kernels.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    y = np.zeros((o, oh, ow), dtype=x.dtype)
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                acc = bias[oc]
                for ic in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            r = i * stride + u - pad
                            s = j * stride + v - pad
                            if 0 <= r < h and 0 <= s < w:
                                acc = acc + x[ic, r, s] * kernels[oc, ic, u, v]
                y[oc, i, j] = acc
    return y


def maxpool_direct(x, window, stride):
    """Per-window loop max pool. Returns (y, argmax positions per window)."""
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    y = np.zeros((c, oh, ow), dtype=x.dtype)
    arg = np.zeros((c, oh, ow, 2), dtype=np.int64)
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                best = -np.inf
                for u in range(window):
                    for v in range(window):
                        val = x[ch, i * stride + u, j * stride + v]
                        if val > best:  # strict: first max wins ties
                            best = val
                            arg[ch, i, j] = (i * stride + u, j * stride + v)
                y[ch, i, j] = best
    return y, arg


def maxpool_grad_direct(x, dy, window, stride):
    """Route each dy element to its window's first-found maximum."""
    _, arg = maxpool_direct(x, window, stride)
    dx = np.zeros_like(x)
    c, oh, ow = dy.shape
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                r, s = arg[ch, i, j]
                dx[ch, r, s] += dy[ch, i, j]
    return dx


def lrn_direct(x, n, k, alpha, beta):
    """Per-channel direct formula for cross-channel response normalization."""
    c = x.shape[0]
    half = n // 2
    y = np.zeros_like(x)
    for ch in range(c):
        lo, hi = max(0, ch - half), min(c - 1, ch + half)
        s = np.zeros(x.shape[1:], dtype=x.dtype)
        for cc in range(lo, hi + 1):
            s = s + x[cc] ** 2
        y[ch] = x[ch] / (k + (alpha / n) * s) ** beta
    return y


def cam_direct(feature_maps, weights):
    """Triple-loop weighted sum of feature maps. feature_maps: (K,S,S)."""
    k, s1, s2 = feature_maps.shape
    out = np.zeros((s1, s2), dtype=feature_maps.dtype)
    for x in range(s1):
        for y in range(s2):
            acc = out.dtype.type(0)
            for ch in range(k):
                acc += weights[ch] * feature_maps[ch, x, y]
            out[x, y] = acc
    return out


def finite_diff(f, x, indices=None, h=1e-6):
    """Central finite differences of scalar f at selected flat indices of x.

    Returns (indices, gradient estimates). x must be float64.
    """
    x = np.asarray(x)
    assert x.dtype == np.float64, "finite differences need double precision"
    flat = x.reshape(-1)
    if indices is None:
        indices = np.arange(flat.size)
    grads = np.zeros(len(indices))
    for pos, i in enumerate(indices):
        orig = flat[i]
        step = h * max(1.0, abs(orig))
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        grads[pos] = (fp - fm) / (2 * step)
    return np.asarray(indices), grads


def rel_err(a, b, floor=1e-8):
    """Elementwise relative error with an absolute floor for near-zero pairs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def bilinear_direct(plane, out_h, out_w):
    """Half-pixel-center bilinear resize of a 2D array, scalar loop."""
    in_h, in_w = plane.shape
    out = np.zeros((out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        for j in range(out_w):
            sy = min(max((i + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1.0)
            sx = min(max((j + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1.0)
            y0 = min(int(np.floor(sy)), max(in_h - 2, 0))
            x0 = min(int(np.floor(sx)), max(in_w - 2, 0))
            fy, fx = sy - y0, sx - x0
            y1 = min(y0 + 1, in_h - 1)
            x1 = min(x0 + 1, in_w - 1)
            out[i, j] = (
                plane[y0, x0] * (1 - fy) * (1 - fx)
                + plane[y0, x1] * (1 - fy) * fx
                + plane[y1, x0] * fy * (1 - fx)
                + plane[y1, x1] * fy * fx
            )
    return out
