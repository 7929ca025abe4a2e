"""Differentiable numerical primitives on (channels, height, width) arrays.

Every forward op has a hand-written backward that is the exact adjoint /
chain-rule counterpart, verified elsewhere against finite differences.
All math is float64; convolution uses wrap-around (circular) indexing so
outputs tile seamlessly and shift equivariance holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


@dataclass(frozen=True)
class FilterKernels:
    """A bank of convolution filters plus per-output-channel biases.

    weights has shape (out_channels, in_channels, kh, kw) with kh, kw odd,
    bias has shape (out_channels,). Orientation is cross-correlation (no
    kernel flip), matching pretrained-CNN weight layouts.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 4:
            raise ShapeError(f"kernel weights must be 4-D, got shape {w.shape}")
        if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
            raise ShapeError(f"kernel spatial dims must be odd, got {w.shape[2:]}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match out_channels {w.shape[0]}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_shape(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


def _as_chw(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected (channels, height, width), got shape {x.shape}")
    return x


def cyclic_shift(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift spatially with wrap-around; inverse of shift by (-dy, -dx)."""
    return np.roll(np.roll(_as_chw(x), dy, axis=1), dx, axis=2)


def conv2d_circular(x: np.ndarray, k: FilterKernels) -> np.ndarray:
    """Circular cross-correlation of x with the filter bank, same spatial size.

    Linear in both x and the kernel weights; wrap-around indexing means
    conv(shift(x)) == shift(conv(x)) for any cyclic shift.
    """
    x = _as_chw(x)
    if x.shape[0] != k.in_channels:
        raise ShapeError(
            f"input has {x.shape[0]} channels, kernels expect {k.in_channels}")
    kh, kw = k.kernel_shape
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ShapeError(f"spatial dims {x.shape[1:]} smaller than kernel {kh}x{kw}")
    cy, cx = kh // 2, kw // 2
    out = np.empty((k.out_channels, x.shape[1], x.shape[2]))
    out[:] = k.bias[:, None, None]
    # One tensordot per kernel tap; small kernels keep this cheap.
    for dy in range(kh):
        for dx in range(kw):
            shifted = np.roll(np.roll(x, cy - dy, axis=1), cx - dx, axis=2)
            out += np.tensordot(k.weights[:, :, dy, dx], shifted, axes=([1], [0]))
    return out


def conv2d_circular_backward(x: np.ndarray, k: FilterKernels,
                             upstream: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. x given the upstream gradient.

    Exact adjoint of the forward linear map (bias drops out).
    """
    x = _as_chw(x)
    upstream = _as_chw(upstream)
    expected = (k.out_channels, x.shape[1], x.shape[2])
    if upstream.shape != expected:
        raise ShapeError(f"upstream shape {upstream.shape}, expected {expected}")
    kh, kw = k.kernel_shape
    cy, cx = kh // 2, kw // 2
    grad = np.zeros_like(x)
    for dy in range(kh):
        for dx in range(kw):
            contrib = np.tensordot(k.weights[:, :, dy, dx], upstream, axes=([0], [0]))
            grad += np.roll(np.roll(contrib, dy - cy, axis=1), dx - cx, axis=2)
    return grad


def rectify(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, v)."""
    return np.maximum(_as_chw(x), 0.0)


def rectify_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pass upstream where x > 0, zero elsewhere (subgradient 0 at 0)."""
    x = _as_chw(x)
    upstream = _as_chw(upstream)
    if upstream.shape != x.shape:
        raise ShapeError(f"upstream shape {upstream.shape} != input shape {x.shape}")
    return np.where(x > 0.0, upstream, 0.0)


def pool2(x: np.ndarray, mode: str = "average") -> np.ndarray:
    """Reduce non-overlapping 2x2 windows; spatial dims must be even."""
    x = _as_chw(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pool2 needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(c, h // 2, 2, w // 2, 2)
    if mode == "average":
        return blocks.mean(axis=(2, 4))
    if mode == "maximum":
        return blocks.max(axis=(2, 4))
    raise ValueError(f"unknown pooling mode {mode!r}")


def pool2_backward(x: np.ndarray, upstream: np.ndarray,
                   mode: str = "average") -> np.ndarray:
    x = _as_chw(x)
    upstream = _as_chw(upstream)
    c, h, w = x.shape
    if upstream.shape != (c, h // 2, w // 2):
        raise ShapeError(
            f"upstream shape {upstream.shape}, expected {(c, h // 2, w // 2)}")
    if mode == "average":
        grad = np.repeat(np.repeat(upstream, 2, axis=1), 2, axis=2) * 0.25
        return grad
    if mode == "maximum":
        blocks = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
        flat = blocks.reshape(c, h // 2, w // 2, 4)
        winner = flat.argmax(axis=3)
        grad_flat = np.zeros_like(flat)
        np.put_along_axis(grad_flat, winner[..., None], upstream[..., None], axis=3)
        return grad_flat.reshape(c, h // 2, w // 2, 2, 2).transpose(
            0, 1, 3, 2, 4).reshape(c, h, w)
    raise ValueError(f"unknown pooling mode {mode!r}")


def upsample_bilinear2(x: np.ndarray) -> np.ndarray:
    """Double the spatial dims with bilinear interpolation.

    Uses the align-corners-free (half-pixel-center) convention: output
    sample centers sit at (i + 0.5)/2 - 0.5 in input coordinates, edges
    clamped. Constant images stay constant; linear ramps stay linear in
    the interior.
    """
    x = _as_chw(x)
    c, h, w = x.shape
    out = np.empty((c, 2 * h, 2 * w))

    def _axis_coords(n):
        pos = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
        pos = np.clip(pos, 0.0, n - 1.0)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n - 1)
        frac = pos - lo
        return lo, hi, frac

    ylo, yhi, yf = _axis_coords(h)
    xlo, xhi, xf = _axis_coords(w)
    top = x[:, ylo, :] * (1.0 - yf)[None, :, None] + x[:, yhi, :] * yf[None, :, None]
    out = (top[:, :, xlo] * (1.0 - xf)[None, None, :]
           + top[:, :, xhi] * xf[None, None, :])
    return out


def finite_diff_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                         eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, the test oracle."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        grad[idx] = (f(xp) - f(xm)) / (2.0 * eps)
        it.iternext()
    return grad
