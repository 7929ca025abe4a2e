"""Convert a torchvision-style VGG-19 checkpoint into the engine's binary
weight format, and emit reference-activation fixtures for cross-checking.

The writer here is an independent implementation of the documented file
format (magic "HTXW", version, preprocess mean, layer records, tag table);
it deliberately does not import the engine, so the two sides only meet at
the file boundary.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

MAGIC = b"HTXW"
FORMAT_VERSION = 1
KIND_CONV = 0
KIND_RECTIFIER = 1
KIND_POOL = 2

#: RGB channel means of the training corpus, for images scaled to [0, 1]
PREPROCESS_MEAN = (0.485, 0.456, 0.406)

#: torchvision VGG-19 `features` indices of all 16 conv layers (the full
#: convolutional prefix; presence of every one is a checkpoint sanity gate)
VGG19_CONV_INDICES = (0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34)

#: expected (out_channels, in_channels) per conv layer, 3x3 kernels throughout
VGG19_CONV_SHAPES = (
    (64, 3), (64, 64),
    (128, 64), (128, 128),
    (256, 128), (256, 256), (256, 256), (256, 256),
    (512, 256), (512, 512), (512, 512), (512, 512),
    (512, 512), (512, 512), (512, 512), (512, 512),
)

#: exported stack: blocks 1-3 complete plus conv4_1, pools between blocks.
#: entries are ("conv", features_index, name), ("pool",), with rectifiers
#: implied after each conv; tags mark the first rectifier of each block.
EXPORT_PLAN = (
    ("conv", 0, "conv1_1"), ("conv", 2, "conv1_2"), ("pool",),
    ("conv", 5, "conv2_1"), ("conv", 7, "conv2_2"), ("pool",),
    ("conv", 10, "conv3_1"), ("conv", 12, "conv3_2"),
    ("conv", 14, "conv3_3"), ("conv", 16, "conv3_4"), ("pool",),
    ("conv", 19, "conv4_1"),
)

TAGGED_CONVS = {"conv1_1": "relu1_1", "conv2_1": "relu2_1",
                "conv3_1": "relu3_1", "conv4_1": "relu4_1"}

FIXTURE_SIZE = (32, 32)
FIXTURE_TOLERANCE = 1e-4


class CheckpointError(ValueError):
    """Base class for unusable checkpoints."""


class MissingLayerError(CheckpointError):
    """A required conv layer is absent from the checkpoint."""


class ShapeAnomalyError(CheckpointError):
    """A conv layer is present but has unexpected dimensions."""


def load_checkpoint(path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Read and validate the 16-conv-layer prefix of a VGG-19 state dict.

    Returns {features_index: (weights f32 (out, in, 3, 3), bias f32 (out,))}.
    """
    state = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    layers = {}
    for idx, (out_c, in_c) in zip(VGG19_CONV_INDICES, VGG19_CONV_SHAPES):
        w_key, b_key = f"features.{idx}.weight", f"features.{idx}.bias"
        if w_key not in state or b_key not in state:
            raise MissingLayerError(
                f"checkpoint is missing conv layer features.{idx}")
        w = np.asarray(state[w_key], dtype=np.float32)
        b = np.asarray(state[b_key], dtype=np.float32)
        if w.shape != (out_c, in_c, 3, 3) or b.shape != (out_c,):
            raise ShapeAnomalyError(
                f"features.{idx}: weight shape {w.shape}, bias shape "
                f"{b.shape}; expected {(out_c, in_c, 3, 3)} and {(out_c,)}")
        layers[idx] = (w, b)
    return layers


def _serialized_network(layers) -> bytes:
    """The exported byte stream: header, layer records, tag table."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<3f", *PREPROCESS_MEAN))
    records = []
    tags = {}
    for step in EXPORT_PLAN:
        if step[0] == "pool":
            records.append(("pool",))
        else:
            _, idx, name = step
            records.append(("conv", layers[idx]))
            records.append(("rectifier",))
            if name in TAGGED_CONVS:
                tags[TAGGED_CONVS[name]] = len(records) - 1
    buf.write(struct.pack("<I", len(records)))
    for record in records:
        if record[0] == "conv":
            w, b = record[1]
            buf.write(struct.pack("<B", KIND_CONV))
            buf.write(struct.pack("<4I", *w.shape))
            buf.write(w.astype("<f4").tobytes())
            buf.write(b.astype("<f4").tobytes())
        elif record[0] == "rectifier":
            buf.write(struct.pack("<B", KIND_RECTIFIER))
        else:
            buf.write(struct.pack("<B", KIND_POOL))
    buf.write(struct.pack("<I", len(tags)))
    for name, layer_index in tags.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<B", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", layer_index))
    return buf.getvalue()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def export_weights(checkpoint_path, out_path) -> dict:
    """Write the engine weight file; returns a summary (layer table, digest)."""
    layers = load_checkpoint(checkpoint_path)
    data = _serialized_network(layers)
    with open(out_path, "wb") as fh:
        fh.write(data)
    table = []
    for step in EXPORT_PLAN:
        if step[0] == "pool":
            table.append({"layer": "pool2", "shape": None})
        else:
            _, idx, name = step
            table.append({"layer": name, "shape": list(layers[idx][0].shape)})
    return {
        "path": str(out_path),
        "digest": hashlib.sha256(data).hexdigest(),
        "layers": table,
    }


def load_fixture_image(path) -> np.ndarray:
    """Read the fixture PNG as (3, H, W) float64 in [0, 1]; dims must be
    exactly the fixture size."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    arr = arr.transpose(2, 0, 1)
    if arr.shape[1:] != FIXTURE_SIZE:
        raise ValueError(
            f"fixture image must be {FIXTURE_SIZE[0]}x{FIXTURE_SIZE[1]}, "
            f"got {arr.shape[1]}x{arr.shape[2]}")
    return arr


def reference_activations(layers, image: np.ndarray) -> dict[str, np.ndarray]:
    """The exporter's own forward pass: circular 3x3 conv, rectifier, 2x2
    average pooling, mean-subtracted input — mirroring the engine contract
    but implemented on torch tensors."""
    mean = torch.tensor(PREPROCESS_MEAN, dtype=torch.float32).view(1, 3, 1, 1)
    x = torch.from_numpy(image.astype(np.float32)).unsqueeze(0) - mean
    acts = {}
    with torch.no_grad():
        for step in EXPORT_PLAN:
            if step[0] == "pool":
                x = F.avg_pool2d(x, kernel_size=2)
                continue
            _, idx, name = step
            w, b = layers[idx]
            padded = F.pad(x, (1, 1, 1, 1), mode="circular")
            x = F.conv2d(padded, torch.from_numpy(w), torch.from_numpy(b))
            x = F.relu(x)
            if name in TAGGED_CONVS:
                acts[TAGGED_CONVS[name]] = x.squeeze(0).numpy()
    return acts


def emit_fixture(checkpoint_path, image_path, out_path) -> dict:
    """Serialize reference activations for the fixture image (JSON, f32)."""
    layers = load_checkpoint(checkpoint_path)
    image = load_fixture_image(image_path)
    acts = reference_activations(layers, image)
    doc = {
        "image": np.asarray(image, dtype=np.float32).tolist(),
        "tolerance": FIXTURE_TOLERANCE,
        "activations": {tag: np.asarray(a, dtype=np.float32).tolist()
                        for tag, a in sorted(acts.items())},
    }
    data = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    with open(out_path, "wb") as fh:
        fh.write(data)
    return {"path": str(out_path),
            "digest": hashlib.sha256(data).hexdigest(),
            "tags": sorted(acts)}
