"""Network assembly: declarative layer specs, parameter init, whole-network
forward/backward, and weight-file serialization.

The stock architecture stacks three MLPconv blocks (each pooled, normalized,
and dropout-regularized after the first two), two plain 3x3 convolutions, a
global-average-pooling stage, and a fully-connected softmax head. At the
canonical 227-pixel input the feature grid narrows 227 -> 55 -> 27 -> 27 ->
13 -> 13 -> 13 -> 11 and the head sees one 512-vector per image.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import layers
from .layers import ConvParams, LrnParams
from .tensor import DTYPE_SINGLE, Rng, Tensor

LAYER_KINDS = ("mlpconv", "conv", "maxpool", "gap", "fc", "relu", "dropout", "lrn", "softmax_head")

WEIGHT_MAGIC = b"DSPW"
WEIGHT_VERSION = 1

# Reserved parameter-record name for the per-channel input mean.
_MEAN_RECORD = "preprocess.channel_mean"


class WeightFileError(Exception):
    """Base for weight-file parse failures."""


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ChecksumMismatchError(WeightFileError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0  # mlpconv / conv / fc
    kernel: int = 0  # mlpconv / conv
    stride: int = 1
    pad: int = 0
    window: int = 0  # maxpool
    rate: float = 0.0  # dropout
    lrn: LrnParams | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, int, int]  # (3, H, W)
    layers: tuple[LayerSpec, ...]
    num_classes: int
    class_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        validate_spec(self)


@dataclass
class ModelState:
    spec: ModelSpec
    params: dict[str, Tensor]
    mode: str = "eval"  # "train" | "eval"
    channel_mean: Tensor | None = None  # (3,), subtracted from inputs when set

    def with_mode(self, mode: str) -> "ModelState":
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        return ModelState(self.spec, self.params, mode, self.channel_mean)


@dataclass(frozen=True)
class ShapeInfo:
    kind: str
    channels: int
    height: int
    width: int


def propagate_shapes(spec: ModelSpec) -> list[ShapeInfo]:
    """Output (channels, height, width) after every layer; vector stages
    (gap onward) report height = width = 0."""
    c, h, w = spec.input_shape
    spatial = True
    out = []
    for ls in spec.layers:
        if ls.kind in ("mlpconv", "conv"):
            if not spatial:
                raise ValueError(f"{ls.kind} after the feature maps were pooled away")
            h = layers.conv_out_size(h, ls.kernel, ls.stride, ls.pad)
            w = layers.conv_out_size(w, ls.kernel, ls.stride, ls.pad)
            c = ls.out_channels
        elif ls.kind == "maxpool":
            if ls.window > h or ls.window > w:
                raise ValueError(f"pooling window {ls.window} larger than {h}x{w} input")
            h = (h - ls.window) // ls.stride + 1
            w = (w - ls.window) // ls.stride + 1
        elif ls.kind == "gap":
            spatial = False
            h = w = 0
        elif ls.kind == "fc":
            if spatial:
                raise ValueError("fc layer requires a pooled feature vector")
            c = ls.out_channels
        elif ls.kind in ("relu", "dropout", "lrn", "softmax_head"):
            pass
        out.append(ShapeInfo(ls.kind, c, h, w))
    return out


def validate_spec(spec: ModelSpec):
    if spec.num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {spec.num_classes}")
    if len(spec.class_names) != spec.num_classes:
        raise ValueError(
            f"{len(spec.class_names)} class names for {spec.num_classes} classes"
        )
    if len(spec.input_shape) != 3 or spec.input_shape[0] != 3:
        raise ValueError(f"input shape must be (3, H, W), got {spec.input_shape}")
    if not spec.layers or spec.layers[-1].kind != "softmax_head":
        raise ValueError("layer list must end with exactly one softmax_head")
    if sum(1 for ls in spec.layers if ls.kind == "softmax_head") != 1:
        raise ValueError("layer list must contain exactly one softmax_head")
    fcs = [ls for ls in spec.layers if ls.kind == "fc"]
    if not fcs or fcs[-1].out_channels != spec.num_classes:
        raise ValueError("final fc layer must output num_classes values")
    propagate_shapes(spec)  # raises on an invalid chain


def feature_map_shape(spec: ModelSpec) -> tuple[int, int, int]:
    """Shape of the tensor entering global average pooling (the CAM grid)."""
    shapes = propagate_shapes(spec)
    prev = ShapeInfo("input", spec.input_shape[0], spec.input_shape[1], spec.input_shape[2])
    for info in shapes:
        if info.kind == "gap":
            return (prev.channels, prev.height, prev.width)
        prev = info
    raise ValueError("spec has no gap layer")


_CANONICAL_PLAN = ((11, 4, 0), (5, 1, 2), (3, 1, 1), (3, 1, 1), (3, 1, 0))
_COMPACT_PLAN = ((5, 2, 2), (3, 1, 1), (3, 1, 1), (3, 1, 1), (3, 1, 0))

DEFAULT_CHANNELS = (96, 256, 384, 512, 512)


def deepspace_spec(
    num_classes: int,
    input_side: int = 227,
    channels: tuple[int, int, int, int, int] = DEFAULT_CHANNELS,
    dropout_rate: float = 0.5,
    lrn_params: LrnParams | None = None,
    class_names: tuple[str, ...] | None = None,
) -> ModelSpec:
    """Build the stock architecture for a given class count and input side.

    Inputs of 96 pixels and up use the canonical kernel plan (11x11 stride-4
    stem); smaller desk-scale inputs switch to a 5x5 stride-2 stem with
    otherwise identical structure.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if len(channels) != 5:
        raise ValueError("channels must give widths for the five convolution stages")
    lrn = lrn_params if lrn_params is not None else LrnParams()
    plan = _CANONICAL_PLAN if input_side >= 96 else _COMPACT_PLAN
    c1, c2, c3, c4, c5 = channels
    (k1, s1, p1), (k2, s2, p2), (k3, s3, p3), (k4, s4, p4), (k5, s5, p5) = plan
    spec_layers = (
        LayerSpec("mlpconv", out_channels=c1, kernel=k1, stride=s1, pad=p1),
        LayerSpec("maxpool", window=3, stride=2),
        LayerSpec("lrn", lrn=lrn),
        LayerSpec("dropout", rate=dropout_rate),
        LayerSpec("mlpconv", out_channels=c2, kernel=k2, stride=s2, pad=p2),
        LayerSpec("maxpool", window=3, stride=2),
        LayerSpec("lrn", lrn=lrn),
        LayerSpec("dropout", rate=dropout_rate),
        LayerSpec("mlpconv", out_channels=c3, kernel=k3, stride=s3, pad=p3),
        LayerSpec("conv", out_channels=c4, kernel=k4, stride=s4, pad=p4),
        LayerSpec("relu"),
        LayerSpec("conv", out_channels=c5, kernel=k5, stride=s5, pad=p5),
        LayerSpec("relu"),
        LayerSpec("gap"),
        LayerSpec("fc", out_channels=num_classes),
        LayerSpec("softmax_head"),
    )
    names = tuple(class_names) if class_names is not None else tuple(
        f"class_{i:02d}" for i in range(num_classes)
    )
    try:
        return ModelSpec((3, input_side, input_side), spec_layers, num_classes, names)
    except ValueError as e:
        raise ValueError(f"input side {input_side} too small for the architecture: {e}") from e


def _weighted_layers(spec: ModelSpec):
    """Yield (param name prefix, layer index, LayerSpec, in_channels) for every
    weighted layer, walking the channel chain."""
    c = spec.input_shape[0]
    feat = None
    for i, ls in enumerate(spec.layers):
        if ls.kind == "mlpconv":
            yield f"{i:02d}.mlpconv", i, ls, c
            c = ls.out_channels
        elif ls.kind == "conv":
            yield f"{i:02d}.conv", i, ls, c
            c = ls.out_channels
        elif ls.kind == "gap":
            feat = c
        elif ls.kind == "fc":
            yield f"{i:02d}.fc", i, ls, feat if feat is not None else c
            c = ls.out_channels


def init_params(spec: ModelSpec, rng: Rng, dtype=DTYPE_SINGLE) -> ModelState:
    """He-initialized parameters: weights ~ N(0, sqrt(2/fan_in)), zero biases."""
    params: dict[str, Tensor] = {}

    def conv_group(prefix, out_c, in_c, k):
        fan_in = in_c * k * k
        params[f"{prefix}.kernels"] = rng.gaussian(
            0.0, float(np.sqrt(2.0 / fan_in)), (out_c, in_c, k, k), dtype
        )
        params[f"{prefix}.bias"] = np.zeros(out_c, dtype)

    for prefix, _, ls, in_c in _weighted_layers(spec):
        if ls.kind == "mlpconv":
            conv_group(f"{prefix}.base", ls.out_channels, in_c, ls.kernel)
            conv_group(f"{prefix}.mlp1", ls.out_channels, ls.out_channels, 1)
            conv_group(f"{prefix}.mlp2", ls.out_channels, ls.out_channels, 1)
        elif ls.kind == "conv":
            conv_group(prefix, ls.out_channels, in_c, ls.kernel)
        elif ls.kind == "fc":
            params[f"{prefix}.weight"] = rng.gaussian(
                0.0, float(np.sqrt(2.0 / in_c)), (ls.out_channels, in_c), dtype
            )
            params[f"{prefix}.bias"] = np.zeros(ls.out_channels, dtype)
    return ModelState(spec, params, mode="eval")


@dataclass
class ForwardCaches:
    """Per-layer caches plus head outputs, consumed by backward()."""

    items: list[tuple[int, str, object]]
    probs: Tensor
    batched: bool


def _conv_params(params, prefix, ls: LayerSpec | None = None, stride=1, pad=0):
    if ls is not None:
        stride, pad = ls.stride, ls.pad
    return ConvParams(params[f"{prefix}.kernels"], params[f"{prefix}.bias"], stride, pad)


def forward(state: ModelState, x: Tensor, rng: Rng | None = None):
    """Run the network. Returns (probs, feature_maps, caches) where
    feature_maps is the tensor entering global average pooling.

    Train mode with active dropout requires an Rng.
    """
    spec = state.spec
    x = np.asarray(x)
    batched = x.ndim == 4
    expect = spec.input_shape
    got = x.shape[1:] if batched else x.shape
    if tuple(got) != expect:
        raise ValueError(f"input shape {x.shape} does not match model input {expect}")
    if state.channel_mean is not None:
        mean = state.channel_mean.astype(x.dtype)[:, None, None]
        x = x - (mean[None] if batched else mean)

    p = state.params
    items: list[tuple[int, str, object]] = []
    feature_maps = None
    probs = None
    cur = x
    for i, ls in enumerate(spec.layers):
        if ls.kind == "mlpconv":
            cur, cache = layers.mlpconv_forward(
                cur,
                _conv_params(p, f"{i:02d}.mlpconv.base", ls),
                _conv_params(p, f"{i:02d}.mlpconv.mlp1"),
                _conv_params(p, f"{i:02d}.mlpconv.mlp2"),
            )
        elif ls.kind == "conv":
            cur, cache = layers.conv_forward(cur, _conv_params(p, f"{i:02d}.conv", ls))
        elif ls.kind == "maxpool":
            cur, cache = layers.maxpool_forward(cur, ls.window, ls.stride)
        elif ls.kind == "relu":
            cur, cache = layers.relu_forward(cur)
        elif ls.kind == "lrn":
            cur, cache = layers.lrn_forward(cur, ls.lrn or LrnParams())
        elif ls.kind == "dropout":
            cur, cache = layers.dropout_forward(cur, ls.rate, state.mode, rng)
        elif ls.kind == "gap":
            feature_maps = cur
            cur, cache = layers.gap_forward(cur)
        elif ls.kind == "fc":
            cur, cache = layers.fc_forward(cur, p[f"{i:02d}.fc.weight"], p[f"{i:02d}.fc.bias"])
        elif ls.kind == "softmax_head":
            probs = layers.softmax_probs(cur)
            cache = None
        items.append((i, ls.kind, cache))
    return probs, feature_maps, ForwardCaches(items, probs, batched)


def backward(state: ModelState, caches: ForwardCaches, labels) -> dict[str, Tensor]:
    """Gradients of the (batch-mean) cross-entropy loss, one entry per parameter."""
    if caches is None or caches.probs is None:
        raise ValueError("backward needs the caches returned by forward")
    probs = caches.probs
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = probs.shape[0] if caches.batched else 1
    k = state.spec.num_classes
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")

    p2 = probs if caches.batched else probs[None]
    d = p2.copy()
    d[np.arange(n), labels] -= 1.0
    if caches.batched:
        d /= n
    grad = d if caches.batched else d[0]

    grads: dict[str, Tensor] = {}
    for i, kind, cache in reversed(caches.items):
        if kind == "softmax_head":
            continue
        if kind == "mlpconv":
            grad, g_base, g1, g2 = layers.mlpconv_backward(grad, cache)
            for stage, (dk, db) in (("base", g_base), ("mlp1", g1), ("mlp2", g2)):
                grads[f"{i:02d}.mlpconv.{stage}.kernels"] = dk
                grads[f"{i:02d}.mlpconv.{stage}.bias"] = db
        elif kind == "conv":
            grad, dk, db = layers.conv_backward(grad, cache)
            grads[f"{i:02d}.conv.kernels"] = dk
            grads[f"{i:02d}.conv.bias"] = db
        elif kind == "maxpool":
            grad = layers.maxpool_backward(grad, cache)
        elif kind == "relu":
            grad = layers.relu_backward(grad, cache)
        elif kind == "lrn":
            grad = layers.lrn_backward(grad, cache)
        elif kind == "dropout":
            grad = layers.dropout_backward(grad, cache)
        elif kind == "gap":
            grad = layers.gap_backward(grad, cache)
        elif kind == "fc":
            grad, dw, db = layers.fc_backward(grad, cache)
            grads[f"{i:02d}.fc.weight"] = dw
            grads[f"{i:02d}.fc.bias"] = db
    return grads


def loss_from_probs(probs: Tensor, labels) -> float:
    """Batch-mean cross-entropy computed from forward() probabilities."""
    p2 = probs if probs.ndim == 2 else probs[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    picked = p2[np.arange(p2.shape[0]), labels]
    return float(-np.log(np.maximum(picked, 1e-300)).mean())


def fc_head_weights(state: ModelState) -> Tensor:
    """The (num_classes, feature_channels) weight matrix of the softmax head."""
    fc_keys = [k for k in state.params if k.endswith(".fc.weight")]
    if not fc_keys:
        raise ValueError("model has no fc head")
    return state.params[sorted(fc_keys)[-1]]


# ---------------------------------------------------------------------------
# Canonical text form of a ModelSpec


def _format_num(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _layer_fields(ls: LayerSpec) -> str:
    if ls.kind in ("mlpconv", "conv"):
        return f" out_channels={ls.out_channels} kernel={ls.kernel} stride={ls.stride} pad={ls.pad}"
    if ls.kind == "maxpool":
        return f" window={ls.window} stride={ls.stride}"
    if ls.kind == "dropout":
        return f" rate={_format_num(ls.rate)}"
    if ls.kind == "lrn":
        p = ls.lrn
        return (f" n={p.n} k={_format_num(p.k)} alpha={_format_num(p.alpha)}"
                f" beta={_format_num(p.beta)}")
    if ls.kind == "fc":
        return f" out_channels={ls.out_channels}"
    return ""


def spec_to_text(spec: ModelSpec) -> str:
    lines = [
        f"input_shape = {spec.input_shape[0]},{spec.input_shape[1]},{spec.input_shape[2]}",
        f"num_classes = {spec.num_classes}",
    ]
    for i, name in enumerate(spec.class_names):
        lines.append(f"class.{i} = {name}")
    for i, ls in enumerate(spec.layers):
        lines.append(f"layer.{i} = {ls.kind}{_layer_fields(ls)}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> ModelSpec:
    input_shape = None
    num_classes = None
    class_names: dict[int, str] = {}
    layer_lines: dict[int, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"spec line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if key == "input_shape":
            input_shape = tuple(int(v) for v in value.split(","))
        elif key == "num_classes":
            num_classes = int(value)
        elif key.startswith("class."):
            class_names[int(key[6:])] = value
        elif key.startswith("layer."):
            layer_lines[int(key[6:])] = value
        else:
            raise ValueError(f"spec line {lineno}: unknown key {key!r}")
    if input_shape is None or num_classes is None:
        raise ValueError("spec text missing input_shape or num_classes")

    def parse_layer(value: str) -> LayerSpec:
        parts = value.split()
        kind, kv = parts[0], dict(p.split("=", 1) for p in parts[1:])
        if kind in ("mlpconv", "conv"):
            return LayerSpec(kind, out_channels=int(kv["out_channels"]), kernel=int(kv["kernel"]),
                             stride=int(kv["stride"]), pad=int(kv["pad"]))
        if kind == "maxpool":
            return LayerSpec(kind, window=int(kv["window"]), stride=int(kv["stride"]))
        if kind == "dropout":
            return LayerSpec(kind, rate=float(kv["rate"]))
        if kind == "lrn":
            return LayerSpec(kind, lrn=LrnParams(int(kv["n"]), float(kv["k"]),
                                                 float(kv["alpha"]), float(kv["beta"])))
        if kind == "fc":
            return LayerSpec(kind, out_channels=int(kv["out_channels"]))
        return LayerSpec(kind)

    spec_layers = tuple(parse_layer(layer_lines[i]) for i in range(len(layer_lines)))
    names = tuple(class_names[i] for i in range(len(class_names)))
    return ModelSpec(input_shape, spec_layers, num_classes, names)


# ---------------------------------------------------------------------------
# Weight files
#
# Layout: magic "DSPW" | uint32 version | payload | 8-byte checksum, where
# payload = uint32 spec-text length + UTF-8 spec text, then one record per
# parameter: uint32 name length + name, uint32 rank, uint32 dims, raw
# little-endian float32 data. The checksum is the first 8 bytes of SHA-256
# over the payload. Parameters are stored in insertion order.


def save(state: ModelState, path):
    payload = bytearray()
    spec_blob = spec_to_text(state.spec).encode("utf-8")
    payload += struct.pack("<I", len(spec_blob)) + spec_blob

    def add_record(name: str, arr: Tensor):
        data = np.ascontiguousarray(arr, dtype="<f4")
        name_b = name.encode("utf-8")
        payload.extend(struct.pack("<I", len(name_b)))
        payload.extend(name_b)
        payload.extend(struct.pack("<I", data.ndim))
        payload.extend(struct.pack(f"<{data.ndim}I", *data.shape))
        payload.extend(data.tobytes())

    for name, arr in state.params.items():
        add_record(name, arr)
    if state.channel_mean is not None:
        add_record(_MEAN_RECORD, state.channel_mean)

    digest = hashlib.sha256(bytes(payload)).digest()[:8]
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<I", WEIGHT_VERSION))
        f.write(payload)
        f.write(digest)


def load(path) -> ModelState:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != WEIGHT_MAGIC:
        raise BadMagicError(f"{path}: not a weight file (bad magic)")
    if len(blob) < 16:
        raise TruncatedFileError(f"{path}: file too short")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != WEIGHT_VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {WEIGHT_VERSION}")
    payload, digest = blob[8:-8], blob[-8:]
    if hashlib.sha256(payload).digest()[:8] != digest:
        raise ChecksumMismatchError(f"{path}: checksum mismatch (corrupt file)")

    pos = 0

    def read(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(payload):
            raise TruncatedFileError(f"{path}: truncated at byte {8 + pos}")
        chunk = payload[pos : pos + n]
        pos += n
        return chunk

    (spec_len,) = struct.unpack("<I", read(4))
    spec = spec_from_text(read(spec_len).decode("utf-8"))

    params: dict[str, Tensor] = {}
    channel_mean = None
    while pos < len(payload):
        (name_len,) = struct.unpack("<I", read(4))
        name = read(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", read(4))
        dims = struct.unpack(f"<{rank}I", read(4 * rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(read(4 * count), dtype="<f4").reshape(dims).copy()
        if name == _MEAN_RECORD:
            channel_mean = arr
        else:
            params[name] = arr
    return ModelState(spec, params, mode="eval", channel_mean=channel_mean)
