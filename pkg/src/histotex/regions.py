"""Painting-by-numbers support: indexed region masks, per-region style
statistics, and spatially varying Gram / histogram losses.

With a single region every operation here reduces bit-exactly to its
global counterpart in histotex.losses.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .losses import GramMatrix, Histogram, compute_histogram, histogram_match
from .network import ConfigError
from .tensor_ops import ShapeError


@dataclass(frozen=True)
class IndexedMask:
    """Per-pixel region ids in 0..region_count-1."""

    indices: np.ndarray
    region_count: int

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {idx.shape}")
        idx = idx.astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.region_count):
            raise ValueError(
                f"mask ids must lie in 0..{self.region_count - 1}, "
                f"found range [{idx.min()}, {idx.max()}]")
        object.__setattr__(self, "indices", idx)

    @property
    def height(self) -> int:
        return self.indices.shape[0]

    @property
    def width(self) -> int:
        return self.indices.shape[1]

    def occupied(self) -> np.ndarray:
        """Boolean flag per region id: does it own at least one pixel."""
        present = np.zeros(self.region_count, dtype=bool)
        present[np.unique(self.indices)] = True
        return present

    @classmethod
    def from_gray_levels(cls, gray: np.ndarray) -> "IndexedMask":
        """Map distinct gray levels to region ids by ascending value."""
        gray = np.asarray(gray)
        levels = np.unique(gray)
        idx = np.searchsorted(levels, gray)
        return cls(idx, len(levels))


def downsample_mask(mask: IndexedMask, factor: int) -> IndexedMask:
    """Nearest-neighbor (top-left sample per block) mask pyramid step.

    Region ids and region_count are preserved; a region that loses all
    its pixels at the coarse scale is reported as a warning and simply
    carries empty statistics downstream.
    """
    if factor < 1 or factor & (factor - 1):
        raise ValueError(f"factor must be a power of two, got {factor}")
    if mask.height % factor or mask.width % factor:
        raise ShapeError(
            f"mask dims {mask.height}x{mask.width} not divisible by {factor}")
    if factor == 1:
        return mask
    coarse = IndexedMask(mask.indices[::factor, ::factor], mask.region_count)
    vanished = np.nonzero(mask.occupied() & ~coarse.occupied())[0]
    if vanished.size:
        warnings.warn(
            f"regions {vanished.tolist()} vanished at downsampling factor {factor}",
            stacklevel=2)
    return coarse


def _mask_for_layer(mask: IndexedMask, act: np.ndarray) -> IndexedMask:
    h, w = act.shape[1], act.shape[2]
    if (mask.height, mask.width) == (h, w):
        return mask
    if mask.height % h or mask.width % w:
        raise ShapeError(
            f"mask {mask.height}x{mask.width} does not downsample to "
            f"activation {h}x{w}")
    fy, fx = mask.height // h, mask.width // w
    if fy != fx:
        raise ShapeError(f"anisotropic downsampling {fy}x{fx} not supported")
    return downsample_mask(mask, fy)


@dataclass(frozen=True)
class RegionLayerStats:
    """Statistics of one region at one tagged layer; empty when the
    region owns no pixel at this scale."""

    gram: GramMatrix | None
    histograms: tuple[Histogram, ...] | None
    pixel_count: int

    @property
    def empty(self) -> bool:
        return self.pixel_count == 0


@dataclass(frozen=True)
class RegionStats:
    """Per-region, per-layer Gram matrices and per-feature histograms."""

    region_count: int
    per_tag: dict = field(default_factory=dict)  # tag -> tuple[RegionLayerStats]


def build_region_stats(acts, mask: IndexedMask, bin_count: int = 256) -> RegionStats:
    """Collect Gram and histogram statistics per region of an indexed mask.

    The mask is given at image resolution and is downsampled (top-left
    rule) to each layer's spatial dims. Histogram ranges are the min/max
    of the region's own activations per feature.
    """
    per_tag = {}
    for tag, act in acts.items():
        act = np.asarray(act, dtype=np.float64)
        layer_mask = _mask_for_layer(mask, act)
        flat_ids = layer_mask.indices.ravel()
        F = act.reshape(act.shape[0], -1)
        stats = []
        for r in range(mask.region_count):
            sel = flat_ids == r
            n_r = int(sel.sum())
            if n_r == 0:
                stats.append(RegionLayerStats(None, None, 0))
                continue
            Fr = F[:, sel]
            hists = tuple(
                compute_histogram(Fr[j], bin_count, (Fr[j].min(), Fr[j].max()))
                for j in range(Fr.shape[0]))
            stats.append(RegionLayerStats(GramMatrix(Fr @ Fr.T, n_r), hists, n_r))
        per_tag[tag] = tuple(stats)
    return RegionStats(mask.region_count, per_tag)


def _check_ids(out_mask: IndexedMask, stats: RegionStats):
    if out_mask.region_count > stats.region_count:
        raise ConfigError(
            f"output mask has {out_mask.region_count} regions, style stats "
            f"only {stats.region_count}")


def localized_gram_loss(O_acts, out_mask: IndexedMask, style_stats: RegionStats,
                        weights):
    """Per-region Gram loss: each output region is compared against its own
    exemplar region's Gram matrix, normalized by that region's element
    count squared; gradients flow only through the region's pixels."""
    _check_ids(out_mask, style_stats)
    value = 0.0
    grads = {}
    for tag, alpha in weights.items():
        O = np.asarray(O_acts[tag], dtype=np.float64)
        if tag not in style_stats.per_tag:
            raise ConfigError(f"style stats missing tag {tag!r}")
        layer_mask = _mask_for_layer(out_mask, O)
        flat_ids = layer_mask.indices.ravel()
        F = O.reshape(O.shape[0], -1)
        grad_F = np.zeros_like(F)
        for r in range(out_mask.region_count):
            sel = flat_ids == r
            if not sel.any():
                continue
            region = style_stats.per_tag[tag][r]
            if region.empty:
                continue
            if region.gram.size != F.shape[0]:
                raise ShapeError(
                    f"{tag}: style region has {region.gram.size} features, "
                    f"output {F.shape[0]}")
            Fr = F[:, sel]
            n_o = Fr.shape[1]
            scale = region.pixel_count / n_o
            norm = alpha / float(F.shape[0] * region.pixel_count) ** 2
            D = region.gram.entries - scale * (Fr @ Fr.T)
            value += norm * float((D * D).sum())
            grad_F[:, sel] += -4.0 * norm * scale * (D @ Fr)
        grads[tag] = grad_F.reshape(O.shape)
    return value, grads


def localized_histogram_loss(O_acts, out_mask: IndexedMask,
                             style_stats: RegionStats, weights):
    """Histogram matching performed independently per region per feature,
    with the frozen-remap gradient of the global histogram loss."""
    _check_ids(out_mask, style_stats)
    value = 0.0
    grads = {}
    for tag, gamma in weights.items():
        O = np.asarray(O_acts[tag], dtype=np.float64)
        if tag not in style_stats.per_tag:
            raise ConfigError(f"style stats missing tag {tag!r}")
        layer_mask = _mask_for_layer(out_mask, O)
        flat_ids = layer_mask.indices.ravel()
        F = O.reshape(O.shape[0], -1)
        R = F.copy()
        for r in range(out_mask.region_count):
            sel = flat_ids == r
            if not sel.any():
                continue
            region = style_stats.per_tag[tag][r]
            if region.empty:
                continue
            if len(region.histograms) != F.shape[0]:
                raise ShapeError(
                    f"{tag}: style region has {len(region.histograms)} "
                    f"histograms, output {F.shape[0]} features")
            for j in range(F.shape[0]):
                R[j, sel] = histogram_match(F[j, sel], region.histograms[j])
        diff = F - R
        norm = gamma / F.size
        value += norm * float((diff * diff).sum())
        grads[tag] = (2.0 * norm * diff).reshape(O.shape)
    return value, grads
