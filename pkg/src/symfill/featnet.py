"""Fixed convolutional feature extractor with forward pass and exact adjoint.

Plays the role of a frozen VGG-style encoder: a chain of conv / relu /
maxpool layers with a designated tap layer whose output is "the feature
map". The adjoint (``backward``) returns the exact gradient of
``<grad_out, features>`` with respect to the input image, which is what
the reconstruction stage optimizes through.

SFW1 weight file (little-endian): magic ``SFW1``, u32 version = 1,
u32 layer_count, then per layer a u8 kind (0 = conv, 1 = relu,
2 = maxpool); conv adds u32 out_c, in_c, kh, kw, stride, pad, then
``out_c*in_c*kh*kw`` f32 weights and ``out_c`` f32 biases; maxpool adds
u32 window, stride. A trailing u32 gives the tap layer index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import FormatError

SFW1_MAGIC = b"SFW1"
SFW1_VERSION = 1

KIND_CONV = 0
KIND_RELU = 1
KIND_MAXPOOL = 2


@dataclass
class ConvLayer:
    out_c: int
    in_c: int
    kh: int
    kw: int
    stride: int
    pad: int
    weights: np.ndarray  # (out_c, in_c, kh, kw) float32
    bias: np.ndarray     # (out_c,) float32

    kind = "conv"


@dataclass
class ReluLayer:
    kind = "relu"


@dataclass
class MaxPoolLayer:
    window: int = 2
    stride: int = 2

    kind = "maxpool"


@dataclass
class NetworkSpec:
    layers: list = field(default_factory=list)
    tap_index: int = 0


@dataclass
class ForwardTrace:
    """Input (after any channel replication) plus each layer's activation."""
    input: np.ndarray                 # (C, H, W) as fed to layer 0
    activations: list = field(default_factory=list)
    replicated_from: int | None = None  # original channel count, if replicated
    input_shape: tuple = ()             # shape of the array handed to forward()


def validate_network(net: NetworkSpec) -> NetworkSpec:
    """Check layer chaining, weight shapes, and finiteness; returns ``net``."""
    if not net.layers:
        raise ValueError("empty network")
    if not (0 <= net.tap_index < len(net.layers)):
        raise ValueError(f"tap_index {net.tap_index} out of range")
    channels = None
    for i, layer in enumerate(net.layers):
        if isinstance(layer, ConvLayer):
            if layer.stride < 1 or layer.pad < 0:
                raise ValueError(f"layer {i}: stride must be >= 1 and pad >= 0")
            expect_w = (layer.out_c, layer.in_c, layer.kh, layer.kw)
            if tuple(layer.weights.shape) != expect_w:
                raise ValueError(
                    f"layer {i}: weight shape {layer.weights.shape} != {expect_w}"
                )
            if layer.bias.shape != (layer.out_c,):
                raise ValueError(
                    f"layer {i}: bias length {layer.bias.shape[0]} != out_channels {layer.out_c}"
                )
            if not np.all(np.isfinite(layer.weights)) or not np.all(np.isfinite(layer.bias)):
                raise ValueError(f"layer {i}: non-finite weights")
            if channels is not None and layer.in_c != channels:
                raise ValueError(
                    f"layer {i}: expects {layer.in_c} input channels, "
                    f"previous layer produces {channels}"
                )
            channels = layer.out_c
        elif isinstance(layer, MaxPoolLayer):
            if layer.window != layer.stride or layer.window < 2:
                raise ValueError(
                    f"layer {i}: only non-overlapping pooling supported "
                    f"(window == stride >= 2)"
                )
        elif not isinstance(layer, ReluLayer):
            raise ValueError(f"layer {i}: unknown layer type {type(layer)!r}")
    return net


def input_channels(net: NetworkSpec) -> int:
    for layer in net.layers:
        if isinstance(layer, ConvLayer):
            return layer.in_c
    return 1


# ---------------------------------------------------------------------------
# SFW1 serialization
# ---------------------------------------------------------------------------

def write_network(path, net: NetworkSpec) -> None:
    validate_network(net)
    with open(path, "wb") as f:
        f.write(SFW1_MAGIC)
        f.write(struct.pack("<II", SFW1_VERSION, len(net.layers)))
        for layer in net.layers:
            if isinstance(layer, ConvLayer):
                f.write(struct.pack("<B", KIND_CONV))
                f.write(struct.pack("<6I", layer.out_c, layer.in_c, layer.kh,
                                    layer.kw, layer.stride, layer.pad))
                f.write(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
            elif isinstance(layer, ReluLayer):
                f.write(struct.pack("<B", KIND_RELU))
            else:
                f.write(struct.pack("<B", KIND_MAXPOOL))
                f.write(struct.pack("<II", layer.window, layer.stride))
        f.write(struct.pack("<I", net.tap_index))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated at byte {self.off}")
        chunk = self.raw[self.off:self.off + n]
        self.off += n
        return chunk

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def load_network(path) -> NetworkSpec:
    """Parse and validate an SFW1 weight file."""
    with open(path, "rb") as f:
        raw = f.read()
    r = _Reader(raw, path)
    if r.take(4) != SFW1_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {SFW1_MAGIC!r}")
    version = r.u32()
    if version != SFW1_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    n_layers = r.u32()
    layers = []
    for i in range(n_layers):
        (kind,) = struct.unpack("<B", r.take(1))
        if kind == KIND_CONV:
            out_c, in_c, kh, kw, stride, pad = r.u32(6)
            w = r.f32(out_c * in_c * kh * kw).reshape(out_c, in_c, kh, kw)
            b = r.f32(out_c)
            layers.append(ConvLayer(out_c, in_c, kh, kw, stride, pad, w, b))
        elif kind == KIND_RELU:
            layers.append(ReluLayer())
        elif kind == KIND_MAXPOOL:
            window, stride = r.u32(2)
            layers.append(MaxPoolLayer(window, stride))
        else:
            raise FormatError(f"{path}: unknown layer kind {kind} at layer {i}")
    tap_index = r.u32()
    if r.off != len(raw):
        raise FormatError(f"{path}: {len(raw) - r.off} trailing bytes")
    net = NetworkSpec(layers, tap_index)
    try:
        validate_network(net)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    return net


# ---------------------------------------------------------------------------
# Default layout (VGG-16 prefix through the third-block first relu)
# ---------------------------------------------------------------------------

# (kind, out_channels) for the structural layers; relu follows every conv.
DEFAULT_PLAN = (
    ("conv", 64), ("conv", 64), ("pool", None),
    ("conv", 128), ("conv", 128), ("pool", None),
    ("conv", 256),
)


def default_network(in_channels: int = 3, seed: int | None = None,
                    weight_scale: float = 1.0) -> NetworkSpec:
    """Build the default 5-conv / 2-pool layout (3x3 kernels, stride 1, pad 1).

    With ``seed`` given, weights are He-initialized from a seeded generator
    (biases zero), which is enough for every shape/property test; real
    pretrained weights arrive via SFW1 files produced externally.
    A 240x240 input maps to a 256x60x60 feature map at the tap.
    """
    rng = np.random.default_rng(0 if seed is None else seed)
    layers: list = []
    in_c = in_channels
    for kind, out_c in DEFAULT_PLAN:
        if kind == "conv":
            std = weight_scale * np.sqrt(2.0 / (in_c * 9))
            w = rng.normal(0.0, std, size=(out_c, in_c, 3, 3)).astype(np.float32)
            b = np.zeros(out_c, dtype=np.float32)
            layers.append(ConvLayer(out_c, in_c, 3, 3, 1, 1, w, b))
            layers.append(ReluLayer())
            in_c = out_c
        else:
            layers.append(MaxPoolLayer(2, 2))
    net = NetworkSpec(layers, tap_index=len(layers) - 1)
    return validate_network(net)


def small_random_network(seed: int, in_channels: int = 1,
                         channels: tuple = (8, 16), pools: int = 1,
                         weight_scale: float = 1.0) -> NetworkSpec:
    """Small seeded conv/relu(/pool) chain for tests and phantom experiments."""
    rng = np.random.default_rng(seed)
    layers: list = []
    in_c = in_channels
    for i, out_c in enumerate(channels):
        std = weight_scale * np.sqrt(2.0 / (in_c * 9))
        w = rng.normal(0.0, std, size=(out_c, in_c, 3, 3)).astype(np.float32)
        b = np.zeros(out_c, dtype=np.float32)
        layers.append(ConvLayer(out_c, in_c, 3, 3, 1, 1, w, b))
        layers.append(ReluLayer())
        if i < pools:
            layers.append(MaxPoolLayer(2, 2))
        in_c = out_c
    net = NetworkSpec(layers, tap_index=len(layers) - 1)
    return validate_network(net)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def output_shape(net: NetworkSpec, img_shape: tuple) -> tuple[int, int, int]:
    """Tap output shape (C, h, w) for an input of the given image shape."""
    if len(img_shape) == 2:
        c, (h, w) = 1, img_shape
    elif len(img_shape) == 3:
        c, h, w = img_shape
    else:
        raise ValueError(f"image must be (H,W) or (C,H,W), got shape {img_shape}")
    need = input_channels(net)
    if c != need and not (c == 1 and need == 3):
        raise ValueError(f"image has {c} channels but the network expects {need}")
    c = need
    for layer in net.layers[:net.tap_index + 1]:
        if isinstance(layer, ConvLayer):
            h, w = conv_output_shape(h, w, layer)
            c = layer.out_c
        elif isinstance(layer, MaxPoolLayer):
            k = layer.window
            if h % k or w % k:
                raise ValueError(
                    f"spatial dims {h}x{w} not divisible by pool window {k} "
                    "(pad inputs to a pooling-exact size first)"
                )
            h, w = h // k, w // k
    return c, h, w


def conv_output_shape(h: int, w: int, layer: ConvLayer) -> tuple[int, int]:
    ho = (h + 2 * layer.pad - layer.kh) // layer.stride + 1
    wo = (w + 2 * layer.pad - layer.kw) // layer.stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv reduces {h}x{w} below 1x1")
    return ho, wo


def _conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    c, h, w = x.shape
    ho, wo = conv_output_shape(h, w, layer)
    p = layer.pad
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (layer.kh, layer.kw), axis=(1, 2))
    win = win[:, ::layer.stride, ::layer.stride]          # (C, Ho, Wo, kh, kw)
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * layer.kh * layer.kw, ho * wo)
    wmat = layer.weights.reshape(layer.out_c, -1)
    out = wmat @ cols + layer.bias[:, None]
    return out.reshape(layer.out_c, ho, wo)


def _conv_backward(grad_out: np.ndarray, x_shape: tuple, layer: ConvLayer) -> np.ndarray:
    c, h, w = x_shape
    out_c, ho, wo = grad_out.shape
    wmat = layer.weights.reshape(out_c, -1)
    grad_cols = wmat.T @ grad_out.reshape(out_c, -1)      # (C*kh*kw, Ho*Wo)
    grad_cols = grad_cols.reshape(c, layer.kh, layer.kw, ho, wo)
    p, s = layer.pad, layer.stride
    gpad = np.zeros((c, h + 2 * p, w + 2 * p), dtype=grad_out.dtype)
    for dy in range(layer.kh):
        for dx in range(layer.kw):
            gpad[:, dy:dy + ho * s:s, dx:dx + wo * s:s] += grad_cols[:, dy, dx]
    return gpad[:, p:p + h, p:p + w] if p else gpad


def _pool_forward(x: np.ndarray, layer: MaxPoolLayer) -> np.ndarray:
    c, h, w = x.shape
    k = layer.window
    if h % k or w % k:
        raise ValueError(
            f"spatial dims {h}x{w} not divisible by pool window {k} "
            "(pad inputs to a pooling-exact size first)"
        )
    win = x.reshape(c, h // k, k, w // k, k).transpose(0, 1, 3, 2, 4)
    return win.reshape(c, h // k, w // k, k * k).max(axis=-1)


def _pool_backward(grad_out: np.ndarray, x: np.ndarray, layer: MaxPoolLayer) -> np.ndarray:
    c, h, w = x.shape
    k = layer.window
    win = x.reshape(c, h // k, k, w // k, k).transpose(0, 1, 3, 2, 4)
    flat = win.reshape(c, h // k, w // k, k * k)
    # argmax takes the first maximum in row-major window order: the
    # deterministic tie-break the adjoint contract requires.
    am = flat.argmax(axis=-1)
    gwin = np.zeros_like(flat)
    np.put_along_axis(gwin, am[..., None], grad_out[..., None], axis=-1)
    gwin = gwin.reshape(c, h // k, w // k, k, k).transpose(0, 1, 3, 2, 4)
    return gwin.reshape(c, h, w)


def _adapt_channels(img: np.ndarray, net: NetworkSpec) -> tuple[np.ndarray, int | None]:
    x = np.asarray(img, dtype=np.float32)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"image must be (H,W) or (C,H,W), got shape {img.shape}")
    need = input_channels(net)
    if x.shape[0] == need:
        return x, None
    if x.shape[0] == 1 and need == 3:
        # Grayscale into a 3-channel (pretrained-style) first conv.
        return np.repeat(x, 3, axis=0), 1
    raise ValueError(
        f"image has {x.shape[0]} channels but the network expects {need}"
    )


def forward(net: NetworkSpec, img: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Run layers up to the tap; returns (feature map, trace for the adjoint)."""
    x, replicated = _adapt_channels(img, net)
    trace = ForwardTrace(input=x, replicated_from=replicated,
                         input_shape=np.asarray(img).shape)
    for layer in net.layers[:net.tap_index + 1]:
        if isinstance(layer, ConvLayer):
            x = _conv_forward(x, layer)
        elif isinstance(layer, ReluLayer):
            x = np.maximum(x, 0.0)
        else:
            x = _pool_forward(x, layer)
        trace.activations.append(x)
    return x, trace


def backward(net: NetworkSpec, trace: ForwardTrace, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of <grad_out, features> w.r.t. the image fed to ``forward``.

    Maxpool routes gradient to the first-index argmax of each window; relu
    gates by activation > 0. The returned array has the same shape as the
    original ``forward`` input (replicated channels are summed back).
    """
    n_layers = net.tap_index + 1
    if len(trace.activations) != n_layers:
        raise ValueError("trace does not match this network's tap depth")
    if trace.activations[-1].shape != grad_out.shape:
        raise ValueError(
            f"grad_out shape {grad_out.shape} != feature shape "
            f"{trace.activations[-1].shape}"
        )
    g = np.asarray(grad_out, dtype=np.float32)
    for i in range(n_layers - 1, -1, -1):
        layer = net.layers[i]
        x_in = trace.input if i == 0 else trace.activations[i - 1]
        if isinstance(layer, ConvLayer):
            g = _conv_backward(g, x_in.shape, layer)
        elif isinstance(layer, ReluLayer):
            g = g * (trace.activations[i] > 0)
        else:
            g = _pool_backward(g, x_in, layer)
    if trace.replicated_from is not None:
        g = g.sum(axis=0, keepdims=True)
    return g.reshape(trace.input_shape)
