"""Loss kernels: Gram, histogram (with matching), content, mean-activation
and total-variation. Each loss returns its scalar value together with the
analytic gradient with respect to the synthesized activations or image.

Activation maps arrive as (channels, height, width) arrays; statistics
treat each channel as one feature with height*width samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_ops import ShapeError


@dataclass(frozen=True)
class GramMatrix:
    """Raw inner-product matrix between feature rows plus the sample count.

    entries[i, j] = sum_k F[i, k] * F[j, k]; entries / sample_count is a
    sample estimator of the non-central second moment matrix E[X X^T].
    """

    entries: np.ndarray
    sample_count: int

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def normalized(self) -> np.ndarray:
        return self.entries / self.sample_count


@dataclass(frozen=True)
class Histogram:
    """Binned marginal distribution with an explicit value range."""

    bin_count: int
    value_range: tuple[float, float]
    counts: np.ndarray
    total: float

    @property
    def bin_width(self) -> float:
        lo, hi = self.value_range
        return (hi - lo) / self.bin_count if hi > lo else 0.0

    def mean(self) -> float:
        """Mean implied by placing each count at its bin center."""
        lo, _ = self.value_range
        centers = lo + (np.arange(self.bin_count) + 0.5) * self.bin_width
        return float((self.counts * centers).sum() / self.total)


def _features(x: np.ndarray) -> np.ndarray:
    """View a (C, H, W) or (N, n) array as features x samples."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x.reshape(x.shape[0], -1)
    if x.ndim == 2:
        return x
    raise ShapeError(f"expected 2-D or 3-D array, got shape {x.shape}")


def gram(F) -> GramMatrix:
    F = _features(F)
    return GramMatrix(F @ F.T, F.shape[1])


def gram_loss(S_acts, O_acts, weights):
    """Weighted Frobenius distance between Gram matrices over tagged layers.

    value = sum_l  alpha_l / |S_l|^2 * ||G(S_l) - s_l G(O_l)||_F^2
    where s_l rescales the output Gram by the sample-count ratio so that
    source and output spatial sizes may differ (s_l == 1 when they match).
    Returns (value, grads) with grads keyed like O_acts.
    """
    value = 0.0
    grads = {}
    for tag, alpha in weights.items():
        S = _features(S_acts[tag])
        O_shape = np.asarray(O_acts[tag]).shape
        O = _features(O_acts[tag])
        if S.shape[0] != O.shape[0]:
            raise ShapeError(
                f"{tag}: source has {S.shape[0]} features, output {O.shape[0]}")
        scale = S.shape[1] / O.shape[1]
        norm = alpha / float(S.size) ** 2
        D = S @ S.T - scale * (O @ O.T)
        value += norm * float((D * D).sum())
        grads[tag] = (-4.0 * norm * scale * (D @ O)).reshape(O_shape)
    return value, grads


def mean_activation_loss(S_acts, O_acts, weights):
    """Squared difference of per-feature mean activations, weighted per layer."""
    value = 0.0
    grads = {}
    for tag, w in weights.items():
        S = _features(S_acts[tag])
        O_shape = np.asarray(O_acts[tag]).shape
        O = _features(O_acts[tag])
        if S.shape[0] != O.shape[0]:
            raise ShapeError(
                f"{tag}: source has {S.shape[0]} features, output {O.shape[0]}")
        diff = O.mean(axis=1) - S.mean(axis=1)
        value += w * float((diff * diff).sum())
        g = np.broadcast_to((2.0 * w * diff / O.shape[1])[:, None], O.shape)
        grads[tag] = np.ascontiguousarray(g).reshape(O_shape)
    return value, grads


def content_loss(C_acts, O_acts, weights):
    """Per-layer Frobenius distance to the content activations."""
    value = 0.0
    grads = {}
    for tag, beta in weights.items():
        C = np.asarray(C_acts[tag], dtype=np.float64)
        O = np.asarray(O_acts[tag], dtype=np.float64)
        if C.shape != O.shape:
            raise ShapeError(f"{tag}: content shape {C.shape} != output {O.shape}")
        norm = beta / C.size
        diff = O - C
        value += norm * float((diff * diff).sum())
        grads[tag] = 2.0 * norm * diff
    return value, grads


def compute_histogram(values, bin_count: int, value_range) -> Histogram:
    """Bin values into bin_count equal-width bins, clamping into the range.

    Bin index is floor((v - lo) / (hi - lo) * bin_count), with the top
    edge assigned to the last bin.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot histogram an empty sequence")
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    lo, hi = float(value_range[0]), float(value_range[1])
    if not lo <= hi:
        raise ValueError(f"invalid range ({lo}, {hi})")
    if hi == lo:
        counts = np.zeros(bin_count)
        counts[0] = values.size
        return Histogram(bin_count, (lo, hi), counts, float(values.size))
    idx = np.floor((np.clip(values, lo, hi) - lo) / (hi - lo) * bin_count)
    idx = np.clip(idx.astype(int), 0, bin_count - 1)
    counts = np.bincount(idx, minlength=bin_count).astype(np.float64)
    return Histogram(bin_count, (lo, hi), counts, float(values.size))


def histogram_match(values, target: Histogram) -> np.ndarray:
    """Monotone remap of values so their distribution follows the target.

    Sort-based exact quantile mapping: the i-th smallest input is sent to
    the target CDF inverse at quantile (i + 0.5) / n, interpolated
    linearly within bins. Order-preserving with stable tie handling, and
    exact to one count per bin when input and target sizes agree.
    """
    values = np.asarray(values, dtype=np.float64)
    flat = values.ravel()
    n = flat.size
    if target.total <= 0:
        raise ValueError("target histogram is empty")
    lo, hi = target.value_range
    if hi == lo:
        return np.full_like(values, lo)
    order = np.argsort(flat, kind="stable")
    cum = np.cumsum(target.counts)
    p = (np.arange(n) + 0.5) * (target.total / n)
    p = np.minimum(p, cum[-1])
    bins = np.searchsorted(cum, p, side="left")
    prev = np.where(bins > 0, cum[bins - 1], 0.0)
    frac = (p - prev) / target.counts[bins]
    # Keep the top of each bin strictly inside it so requantizing lands back
    # in the same bin.
    frac = np.minimum(frac, 1.0 - 1e-12)
    mapped = lo + (bins + frac) * target.bin_width
    out = np.empty(n)
    out[order] = mapped
    return out.reshape(values.shape)


def histogram_loss(O_l, target_hists, gamma: float):
    """Frobenius distance between activations and their histogram remap.

    The remap R runs independently per feature against that feature's
    target histogram, then value = gamma * ||O - R(O)||_F^2 / |O| and
    gradient = 2 gamma (O - R(O)) / |O|, with R frozen (it has zero
    gradient almost everywhere).
    """
    O = _features(O_l)
    O_shape = np.asarray(O_l).shape
    if len(target_hists) != O.shape[0]:
        raise ShapeError(
            f"{len(target_hists)} target histograms for {O.shape[0]} features")
    R = np.empty_like(O)
    for j, hist in enumerate(target_hists):
        R[j] = histogram_match(O[j], hist)
    diff = O - R
    norm = gamma / O.size
    value = norm * float((diff * diff).sum())
    return value, (2.0 * norm * diff).reshape(O_shape), R.reshape(O_shape)


def tv_loss(image, omega: float):
    """Squared forward differences, horizontal and vertical, circular wrap."""
    x = np.asarray(image, dtype=np.float64)
    dh = x - np.roll(x, -1, axis=-1)
    dv = x - np.roll(x, -1, axis=-2)
    value = omega * float((dh * dh).sum() + (dv * dv).sum())
    grad = 2.0 * omega * (dh - np.roll(dh, 1, axis=-1) + dv - np.roll(dv, 1, axis=-2))
    return value, grad
