"""Finite-difference gradient checks for every layer kind.

Each check builds a small random instance in double precision, projects the
layer output to a scalar through a fixed random weighting R, and compares the
analytic backward pass against central finite differences of that scalar.
Seeds are fixed by callers, so results are reproducible run to run.

Inputs for kinked ops (relu, max pooling) are drawn with guaranteed margins so
the finite-difference step never crosses a non-smooth point.
"""

import numpy as np

from deepspace import layers
from deepspace.tensor import Rng

from oracles import finite_diff, rel_err

H_STEP = 1e-6


def _slice(rng, size, k=6):
    k = min(k, size)
    return np.sort(rng.permutation(size)[:k])


def _distinct_uniform(rng, shape, low=-1.0, high=1.0):
    """Values with pairwise gaps far above the finite-difference step."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n).astype(np.float64) + 0.5) / n
    return (low + (high - low) * vals).reshape(shape)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, shape, dtype=np.float64)
    signs = np.where(rng.uniform(0, 1, shape, dtype=np.float64) < 0.5, -1.0, 1.0)
    return x * signs


def _project(y, r):
    return float((y * r).sum())


def check_conv(seed):
    rng = Rng(seed)
    c_in = int(rng.integers(1, 4))
    c_out = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    side = int(rng.integers(k + 2, k + 7))
    x = rng.gaussian(0, 1, (c_in, side, side), dtype=np.float64)
    kern = rng.gaussian(0, 1, (c_out, c_in, k, k), dtype=np.float64)
    bias = rng.gaussian(0, 1, (c_out,), dtype=np.float64)

    def run(xv, kv, bv):
        y, cache = layers.conv_forward(xv, layers.ConvParams(kv, bv, stride, pad))
        return y, cache

    y0, cache = run(x, kern, bias)
    r = rng.uniform(0.5, 1.5, y0.shape, dtype=np.float64)
    dx, dk, db = layers.conv_backward(r, cache)

    errs = []
    idx, fd = finite_diff(lambda v: _project(run(v, kern, bias)[0], r), x, _slice(rng, x.size), H_STEP)
    errs.append(rel_err(dx.reshape(-1)[idx], fd).max())
    idx, fd = finite_diff(lambda v: _project(run(x, v, bias)[0], r), kern, _slice(rng, kern.size), H_STEP)
    errs.append(rel_err(dk.reshape(-1)[idx], fd).max())
    idx, fd = finite_diff(lambda v: _project(run(x, kern, v)[0], r), bias, _slice(rng, bias.size), H_STEP)
    errs.append(rel_err(db.reshape(-1)[idx], fd).max())
    return max(errs)


def _mlpconv_instance(seed):
    rng = Rng(seed)
    c_in = int(rng.integers(1, 3))
    c0 = int(rng.integers(2, 4))
    c1 = int(rng.integers(2, 4))
    c2 = int(rng.integers(2, 4))
    k = int(rng.integers(2, 4))
    side = k + 4
    x = rng.gaussian(0, 1, (c_in, side, side), dtype=np.float64)
    params = [
        (rng.gaussian(0, 1, (c0, c_in, k, k), dtype=np.float64), rng.gaussian(0, 1, (c0,), dtype=np.float64), 1, 1),
        (rng.gaussian(0, 1, (c1, c0, 1, 1), dtype=np.float64), rng.gaussian(0, 1, (c1,), dtype=np.float64), 1, 0),
        (rng.gaussian(0, 1, (c2, c1, 1, 1), dtype=np.float64), rng.gaussian(0, 1, (c2,), dtype=np.float64), 1, 0),
    ]
    return rng, x, params


def check_mlpconv(seed):
    rng, x, params = _mlpconv_instance(seed)

    def run(xv, plist):
        base = layers.ConvParams(plist[0][0], plist[0][1], plist[0][2], plist[0][3])
        mlp1 = layers.ConvParams(plist[1][0], plist[1][1], 1, 0)
        mlp2 = layers.ConvParams(plist[2][0], plist[2][1], 1, 0)
        return layers.mlpconv_forward(xv, base, mlp1, mlp2)

    y0, cache = run(x, params)
    r = rng.uniform(0.5, 1.5, y0.shape, dtype=np.float64)
    dx, g0, g1, g2 = layers.mlpconv_backward(r, cache)

    errs = []
    idx, fd = finite_diff(lambda v: _project(run(v, params)[0], r), x, _slice(rng, x.size), H_STEP)
    errs.append(rel_err(dx.reshape(-1)[idx], fd).max())
    for stage, (dk, db) in enumerate((g0, g1, g2)):
        kern = params[stage][0]
        idx, fd = finite_diff(lambda v: _project(run(x, params)[0], r), kern, _slice(rng, kern.size), H_STEP)
        errs.append(rel_err(dk.reshape(-1)[idx], fd).max())
        bias = params[stage][1]
        idx, fd = finite_diff(lambda v: _project(run(x, params)[0], r), bias, _slice(rng, bias.size), H_STEP)
        errs.append(rel_err(db.reshape(-1)[idx], fd).max())
    return max(errs)


def check_maxpool(seed):
    rng = Rng(seed)
    c = int(rng.integers(1, 4))
    window = int(rng.integers(2, 4))
    stride = int(rng.integers(1, 3))
    side = window + int(rng.integers(2, 6))
    x = _distinct_uniform(rng, (c, side, side))

    def run(xv):
        return layers.maxpool_forward(xv, window, stride)

    y0, cache = run(x)
    r = rng.uniform(0.5, 1.5, y0.shape, dtype=np.float64)
    dx = layers.maxpool_backward(r, cache)
    idx, fd = finite_diff(lambda v: _project(run(v)[0], r), x, _slice(rng, x.size, 12), H_STEP)
    return rel_err(dx.reshape(-1)[idx], fd).max()


def check_gap(seed):
    rng = Rng(seed)
    c = int(rng.integers(1, 5))
    side = int(rng.integers(1, 6))
    x = rng.gaussian(0, 1, (c, side, side), dtype=np.float64)
    y0, cache = layers.gap_forward(x)
    r = rng.uniform(0.5, 1.5, y0.shape, dtype=np.float64)
    dx = layers.gap_backward(r, cache)
    idx, fd = finite_diff(lambda v: _project(layers.gap_forward(v)[0], r), x, _slice(rng, x.size), H_STEP)
    return rel_err(dx.reshape(-1)[idx], fd).max()


def check_fc(seed):
    rng = Rng(seed)
    n = int(rng.integers(2, 8))
    m = int(rng.integers(2, 8))
    x = rng.gaussian(0, 1, (n,), dtype=np.float64)
    w = rng.gaussian(0, 1, (m, n), dtype=np.float64)
    b = rng.gaussian(0, 1, (m,), dtype=np.float64)
    y0, cache = layers.fc_forward(x, w, b)
    r = rng.uniform(0.5, 1.5, y0.shape, dtype=np.float64)
    dx, dw, db = layers.fc_backward(r, cache)
    errs = []
    idx, fd = finite_diff(lambda v: _project(layers.fc_forward(v, w, b)[0], r), x, None, H_STEP)
    errs.append(rel_err(dx.reshape(-1)[idx], fd).max())
    idx, fd = finite_diff(lambda v: _project(layers.fc_forward(x, v, b)[0], r), w, _slice(rng, w.size), H_STEP)
    errs.append(rel_err(dw.reshape(-1)[idx], fd).max())
    idx, fd = finite_diff(lambda v: _project(layers.fc_forward(x, w, v)[0], r), b, None, H_STEP)
    errs.append(rel_err(db.reshape(-1)[idx], fd).max())
    return max(errs)


def check_relu(seed):
    rng = Rng(seed)
    x = _away_from_zero(rng, (3, 5, 5))
    y0, cache = layers.relu_forward(x)
    r = rng.uniform(0.5, 1.5, y0.shape, dtype=np.float64)
    dx = layers.relu_backward(r, cache)
    idx, fd = finite_diff(lambda v: _project(layers.relu_forward(v)[0], r), x, _slice(rng, x.size, 12), H_STEP)
    return rel_err(dx.reshape(-1)[idx], fd).max()


def check_dropout(seed):
    rng = Rng(seed)
    x = rng.gaussian(0, 1, (4, 6, 6), dtype=np.float64)
    rate = 0.4
    mask_seed = seed * 7919 + 1

    def run(xv):
        return layers.dropout_forward(xv, rate, "train", Rng(mask_seed))

    y0, cache = run(x)
    r = rng.uniform(0.5, 1.5, y0.shape, dtype=np.float64)
    dx = layers.dropout_backward(r, cache)
    idx, fd = finite_diff(lambda v: _project(run(v)[0], r), x, _slice(rng, x.size, 12), H_STEP)
    return rel_err(dx.reshape(-1)[idx], fd).max()


def check_lrn(seed):
    rng = Rng(seed)
    c = int(rng.integers(2, 8))
    p = layers.LrnParams(n=5, k=2.0, alpha=0.05, beta=0.75)
    x = rng.gaussian(0, 1, (c, 4, 4), dtype=np.float64)
    y0, cache = layers.lrn_forward(x, p)
    r = rng.uniform(0.5, 1.5, y0.shape, dtype=np.float64)
    dx = layers.lrn_backward(r, cache)
    idx, fd = finite_diff(lambda v: _project(layers.lrn_forward(v, p)[0], r), x, _slice(rng, x.size, 12), H_STEP)
    return rel_err(dx.reshape(-1)[idx], fd).max()


def check_softmax_xent(seed):
    rng = Rng(seed)
    k = int(rng.integers(3, 12))
    logits = rng.gaussian(0, 2, (k,), dtype=np.float64)
    label = int(rng.integers(0, k))

    def run(lv):
        loss, _, _ = layers.softmax_xent_forward(lv, label)
        return loss

    _, _, cache = layers.softmax_xent_forward(logits, label)
    dlogits = layers.softmax_xent_backward(cache)
    idx, fd = finite_diff(run, logits, None, H_STEP)
    return rel_err(dlogits.reshape(-1)[idx], fd).max()


LAYER_CHECKS = {
    "conv": check_conv,
    "mlpconv": check_mlpconv,
    "maxpool": check_maxpool,
    "gap": check_gap,
    "fc": check_fc,
    "relu": check_relu,
    "dropout": check_dropout,
    "lrn": check_lrn,
    "softmax_xent": check_softmax_xent,
}


def check_network(seed, input_side=32, channels=(8, 16, 16, 24, 24), num_classes=4,
                  per_tensor=2, h=1e-5):
    """Whole-network loss gradient vs finite differences.

    Dropout layers are present but run at rate 0 so the train-mode loss is a
    deterministic, FD-differentiable function of the parameters. Freshly
    initialized biases are exactly zero, which parks dead-channel rectifier
    inputs exactly on the ReLU kink where finite differences are undefined, so
    every parameter is nudged to a generic point first. Returns the worst
    relative error over a random slice of every parameter tensor.
    """
    from deepspace import model as dsmodel

    spec = dsmodel.deepspace_spec(num_classes, input_side, channels, dropout_rate=0.0)
    state = dsmodel.init_params(spec, Rng(seed), dtype=np.float64).with_mode("train")
    nudge = Rng(seed + 2)
    for arr in state.params.values():
        arr += nudge.gaussian(0.0, 0.03, arr.shape, dtype=np.float64)
    data_rng = Rng(seed + 1)
    x = data_rng.uniform(0.0, 1.0, (2, 3, input_side, input_side), dtype=np.float64)
    labels = np.asarray(data_rng.integers(0, num_classes, (2,)))

    def loss():
        probs, _, _ = dsmodel.forward(state, x)
        return dsmodel.loss_from_probs(probs, labels)

    probs, _, caches = dsmodel.forward(state, x)
    grads = dsmodel.backward(state, caches, labels)

    worst = 0.0
    for name, arr in state.params.items():
        flat = arr.reshape(-1)
        pick = _slice(data_rng, flat.size, per_tensor)
        idx, fd = finite_diff(lambda _: loss(), arr, pick, h)
        got = grads[name].reshape(-1)[idx]
        worst = max(worst, rel_err(got, fd, floor=1e-7).max())
    return worst
