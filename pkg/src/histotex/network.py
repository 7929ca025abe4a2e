"""Layered convolutional feature extractor with manual backpropagation.

A NetworkSpec is an immutable stack of circular-convolution, rectifier and
2x2-pooling layers with named tags on rectifier outputs (the "relu{b}_{i}"
convention). The engine never assumes a particular architecture; pretrained
weights are one pluggable backend, seeded random filter banks another.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor_ops import (
    FilterKernels,
    ShapeError,
    conv2d_circular,
    conv2d_circular_backward,
    pool2,
    pool2_backward,
    rectify,
    rectify_backward,
)

MAGIC = b"HTXW"
FORMAT_VERSION = 1

KIND_CONV = 0
KIND_RECTIFIER = 1
KIND_POOL = 2

#: map from tag name to activation array, e.g. {"relu1_1": (16, 32, 32) array}
ActivationSet = Mapping[str, np.ndarray]


class ConfigError(ValueError):
    """Raised for invalid tags or inconsistent configuration."""


class WeightFormatError(ValueError):
    """Raised when a weight file fails to parse."""


@dataclass(frozen=True)
class ConvLayer:
    kernels: FilterKernels


@dataclass(frozen=True)
class RectifierLayer:
    pass


@dataclass(frozen=True)
class PoolLayer:
    mode: str = "average"


Layer = ConvLayer | RectifierLayer | PoolLayer


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack plus tag table; immutable after construction."""

    layers: tuple[Layer, ...]
    tags: Mapping[str, int]
    preprocess_mean: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "tags", dict(self.tags))
        channels = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvLayer):
                if channels is not None and layer.kernels.in_channels != channels:
                    raise ConfigError(
                        f"layer {i}: expects {layer.kernels.in_channels} input "
                        f"channels but previous layer produces {channels}")
                channels = layer.kernels.out_channels
        for tag, idx in self.tags.items():
            if not 0 <= idx < len(self.layers):
                raise ConfigError(f"tag {tag!r} points at layer {idx}, out of range")
            if not isinstance(self.layers[idx], RectifierLayer):
                raise ConfigError(f"tag {tag!r} must name a rectifier layer")

    @property
    def input_channels(self) -> int:
        for layer in self.layers:
            if isinstance(layer, ConvLayer):
                return layer.kernels.in_channels
        raise ConfigError("network has no convolution layer")

    def pool_stride(self) -> int:
        """Total spatial downsampling factor across the stack."""
        stride = 1
        for layer in self.layers:
            if isinstance(layer, PoolLayer):
                stride *= 2
        return stride


def _preprocess(image: np.ndarray, net: NetworkSpec) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    mean = np.asarray(net.preprocess_mean, dtype=np.float64)
    if x.ndim == 3 and x.shape[0] == mean.size and mean.any():
        x = x - mean[:, None, None]
    return x


def _run_forward(image: np.ndarray, net: NetworkSpec, last: int | None = None):
    """Run the stack through layer `last` (default: all layers), returning
    per-layer inputs and the final output for backprop."""
    stop = len(net.layers) if last is None else last + 1
    inputs = []
    x = _preprocess(image, net)
    for layer in net.layers[:stop]:
        inputs.append(x)
        if isinstance(layer, ConvLayer):
            x = conv2d_circular(x, layer.kernels)
        elif isinstance(layer, RectifierLayer):
            x = rectify(x)
        else:
            x = pool2(x, layer.mode)
    return inputs, x


def forward(image: np.ndarray, net: NetworkSpec, tags) -> dict[str, np.ndarray]:
    """Return the activation at every requested tag."""
    tags = list(tags)
    unknown = [t for t in tags if t not in net.tags]
    if unknown:
        raise ConfigError(f"unknown tags {unknown}; network defines {sorted(net.tags)}")
    wanted = {net.tags[t]: t for t in tags}
    last = max(wanted) if wanted else -1
    acts: dict[str, np.ndarray] = {}
    x = _preprocess(image, net)
    for i, layer in enumerate(net.layers[: last + 1]):
        if isinstance(layer, ConvLayer):
            x = conv2d_circular(x, layer.kernels)
        elif isinstance(layer, RectifierLayer):
            x = rectify(x)
        else:
            x = pool2(x, layer.mode)
        if i in wanted:
            acts[wanted[i]] = x
    return acts


def forward_cache(image: np.ndarray, net: NetworkSpec) -> list[np.ndarray]:
    """Per-layer inputs for reuse across several backward passes."""
    inputs, _ = _run_forward(image, net)
    return inputs


def forward_with_cache(image: np.ndarray, net: NetworkSpec, tags):
    """One forward pass returning (activations, cache for backward)."""
    tags = list(tags)
    unknown = [t for t in tags if t not in net.tags]
    if unknown:
        raise ConfigError(f"unknown tags {unknown}; network defines {sorted(net.tags)}")
    last = max((net.tags[t] for t in tags), default=-1)
    inputs, final = _run_forward(image, net, last)
    acts = {}
    for tag in tags:
        idx = net.tags[tag]
        acts[tag] = inputs[idx + 1] if idx + 1 < len(inputs) else final
    return acts, inputs


def backward_to_image(image: np.ndarray, net: NetworkSpec,
                      activation_grads: ActivationSet,
                      cache: list[np.ndarray] | None = None) -> np.ndarray:
    """Backpropagate tagged activation-space gradients to image space.

    Gradients injected at several tags accumulate through the shared
    prefix, i.e. the result is the sum of all tagged contributions.
    A cache from forward_cache(image, net) skips the re-run of the
    forward pass.
    """
    for tag in activation_grads:
        if tag not in net.tags:
            raise ConfigError(f"unknown tag {tag!r}")
    inject = {net.tags[tag]: np.asarray(g, dtype=np.float64)
              for tag, g in activation_grads.items()}
    if not inject:
        return np.zeros_like(np.asarray(image, dtype=np.float64))
    last = max(inject)
    inputs = cache if cache is not None else _run_forward(image, net, last)[0]
    running = None
    for i in range(last, -1, -1):
        layer = net.layers[i]
        x_in = inputs[i]
        if running is None:
            running = np.zeros_like(_layer_output(layer, x_in))
        if i in inject:
            g = inject[i]
            if g.shape != running.shape:
                raise ShapeError(
                    f"gradient for layer {i} has shape {g.shape}, "
                    f"activation shape is {running.shape}")
            running = running + g
        if isinstance(layer, ConvLayer):
            running = conv2d_circular_backward(x_in, layer.kernels, running)
        elif isinstance(layer, RectifierLayer):
            running = rectify_backward(x_in, running)
        else:
            running = pool2_backward(x_in, running, layer.mode)
    return running


def _layer_output(layer: Layer, x_in: np.ndarray) -> np.ndarray:
    if isinstance(layer, ConvLayer):
        return conv2d_circular(x_in, layer.kernels)
    if isinstance(layer, RectifierLayer):
        return rectify(x_in)
    return pool2(x_in, layer.mode)


# ---------------------------------------------------------------------------
# Weight file format (binary, little-endian):
#   magic "HTXW", version u32, preprocess mean 3 x f32, layer count u32,
#   per layer: kind u8 (0=conv, 1=rectifier, 2=pool); conv layers add
#   out/in/kh/kw u32 x4, weights f32 row-major, biases f32;
#   tag table: count u32, then (name length u8, name bytes, layer index u32).
# ---------------------------------------------------------------------------


def save_network(net: NetworkSpec, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<3f", *net.preprocess_mean))
    buf.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        if isinstance(layer, ConvLayer):
            buf.write(struct.pack("<B", KIND_CONV))
            w = layer.kernels.weights
            buf.write(struct.pack("<4I", *w.shape))
            buf.write(w.astype("<f4").tobytes())
            buf.write(layer.kernels.bias.astype("<f4").tobytes())
        elif isinstance(layer, RectifierLayer):
            buf.write(struct.pack("<B", KIND_RECTIFIER))
        else:
            buf.write(struct.pack("<B", KIND_POOL))
    buf.write(struct.pack("<I", len(net.tags)))
    for name, idx in net.tags.items():
        raw = name.encode("utf-8")
        if len(raw) > 255:
            raise ValueError(f"tag name too long: {name!r}")
        buf.write(struct.pack("<B", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", idx))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise WeightFormatError("unexpected end of file")
    return data


def load_network(path) -> NetworkSpec:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise WeightFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise WeightFormatError(f"unsupported format version {version}")
        mean = struct.unpack("<3f", _read_exact(fh, 12))
        (n_layers,) = struct.unpack("<I", _read_exact(fh, 4))
        layers: list[Layer] = []
        for i in range(n_layers):
            (kind,) = struct.unpack("<B", _read_exact(fh, 1))
            if kind == KIND_CONV:
                out_c, in_c, kh, kw = struct.unpack("<4I", _read_exact(fh, 16))
                if min(out_c, in_c, kh, kw) == 0 or kh % 2 == 0 or kw % 2 == 0:
                    raise WeightFormatError(
                        f"layer {i}: inconsistent conv dims "
                        f"{(out_c, in_c, kh, kw)}")
                n_w = out_c * in_c * kh * kw
                weights = np.frombuffer(_read_exact(fh, 4 * n_w), dtype="<f4")
                bias = np.frombuffer(_read_exact(fh, 4 * out_c), dtype="<f4")
                layers.append(ConvLayer(FilterKernels(
                    weights.astype(np.float64).reshape(out_c, in_c, kh, kw),
                    bias.astype(np.float64))))
            elif kind == KIND_RECTIFIER:
                layers.append(RectifierLayer())
            elif kind == KIND_POOL:
                layers.append(PoolLayer())
            else:
                raise WeightFormatError(f"layer {i}: unknown layer kind {kind}")
        (n_tags,) = struct.unpack("<I", _read_exact(fh, 4))
        tags = {}
        for _ in range(n_tags):
            (name_len,) = struct.unpack("<B", _read_exact(fh, 1))
            name = _read_exact(fh, name_len).decode("utf-8")
            (idx,) = struct.unpack("<I", _read_exact(fh, 4))
            tags[name] = idx
        trailing = fh.read(1)
        if trailing:
            raise WeightFormatError("trailing bytes after tag table")
    try:
        return NetworkSpec(tuple(layers), tags, tuple(float(m) for m in mean))
    except ConfigError as exc:
        raise WeightFormatError(str(exc)) from exc


DEFAULT_TOPOLOGY = (3, 16, 32, 64, 128)


def random_filter_bank(seed: int, topology=DEFAULT_TOPOLOGY, kernel_size: int = 3,
                       pool: bool = True) -> NetworkSpec:
    """Seeded random bank: one conv+rectifier block per channel step.

    Weights are unit-variance Gaussian draws with each filter normalized
    to unit Frobenius norm; biases are zero. With pool=True a 2x2 average
    pool sits between blocks, mirroring the VGG tag structure.
    """
    if len(topology) < 2:
        raise ValueError("topology needs at least input and one block")
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    tags: dict[str, int] = {}
    for block, (in_c, out_c) in enumerate(zip(topology[:-1], topology[1:]), start=1):
        if block > 1 and pool:
            layers.append(PoolLayer())
        w = rng.standard_normal((out_c, in_c, kernel_size, kernel_size))
        norms = np.sqrt((w ** 2).sum(axis=(1, 2, 3), keepdims=True))
        w = w / norms
        layers.append(ConvLayer(FilterKernels(w, np.zeros(out_c))))
        layers.append(RectifierLayer())
        tags[f"relu{block}_1"] = len(layers) - 1
    return NetworkSpec(tuple(layers), tags)
