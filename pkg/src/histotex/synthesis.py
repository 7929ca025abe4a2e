"""Optimization pipeline: loss assembly, white-noise init, coarse-to-fine
pyramid, adaptive gradient descent, and automatic weight tuning by
per-term gradient clamping.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import losses as L
from . import regions as R
from .network import ConfigError, NetworkSpec, backward_to_image, forward, forward_with_cache
from .tensor_ops import ShapeError, pool2, upsample_bilinear2

GRAM_TAGS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1")
HISTOGRAM_TAGS = ("relu1_1", "relu4_1")
CONTENT_TAGS = ("relu4_1",)


class NumericalAbort(RuntimeError):
    """Optimization hit a non-finite loss or gradient."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or []


def _default_gram_weights():
    return {t: 1.0 for t in GRAM_TAGS}


def _default_content_weights():
    return {t: 1.0 for t in CONTENT_TAGS}


def _default_histogram_weights():
    return {t: 1.0 for t in HISTOGRAM_TAGS}


def _default_clamps():
    return {"gram": 100.0, "histogram": 1.0, "content": 1.0, "tv": 1.0}


@dataclass
class SynthesisConfig:
    """All knobs of the synthesis loop; defaults need no manual tuning."""

    gram_weights: dict = field(default_factory=_default_gram_weights)
    content_weights: dict = field(default_factory=_default_content_weights)
    histogram_weights: dict = field(default_factory=_default_histogram_weights)
    tv_weight: float = 1.0
    clamp_thresholds: dict = field(default_factory=_default_clamps)
    pyramid_levels: int = 3
    iterations: int = 700
    output_size: tuple[int, int] | None = None
    seed: int = 0
    step_size: float = 0.02
    moment_decay: tuple[float, float] = (0.9, 0.999)
    histogram_bins: int = 256
    value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for name in ("gram_weights", "content_weights", "histogram_weights"):
            weights = getattr(self, name)
            if any(w < 0 for w in weights.values()):
                raise ConfigError(f"{name} must be nonnegative")
        if self.tv_weight < 0:
            raise ConfigError("tv_weight must be nonnegative")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.pyramid_levels < 1:
            raise ConfigError("pyramid_levels must be >= 1")
        if any(t <= 0 for t in self.clamp_thresholds.values()):
            raise ConfigError("clamp thresholds must be positive")
        if self.output_size is not None:
            self.output_size = (int(self.output_size[0]), int(self.output_size[1]))
        self.moment_decay = tuple(self.moment_decay)
        self.value_range = tuple(self.value_range)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["output_size"] = list(self.output_size) if self.output_size else None
        d["moment_decay"] = list(self.moment_decay)
        d["value_range"] = list(self.value_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        if d.get("output_size") is not None:
            d["output_size"] = tuple(d["output_size"])
        for key in ("moment_decay", "value_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def active_tags(self, include_content: bool) -> set[str]:
        tags = {t for t, w in self.gram_weights.items() if w > 0}
        tags |= {t for t, w in self.histogram_weights.items() if w > 0}
        if include_content:
            tags |= {t for t, w in self.content_weights.items() if w > 0}
        return tags


@dataclass
class SourceStats:
    """Precomputed per-level statistics of the exemplar."""

    gram_acts: dict
    hist_targets: dict  # tag -> tuple[Histogram] per feature
    region_stats: R.RegionStats | None = None


def compute_source_stats(source: np.ndarray, net: NetworkSpec,
                         config: SynthesisConfig,
                         style_mask: R.IndexedMask | None = None) -> SourceStats:
    gram_tags = [t for t, w in config.gram_weights.items() if w > 0]
    hist_tags = [t for t, w in config.histogram_weights.items() if w > 0]
    acts = forward(source, net, sorted(set(gram_tags) | set(hist_tags)))
    hist_targets = {}
    for tag in hist_tags:
        F = acts[tag].reshape(acts[tag].shape[0], -1)
        hist_targets[tag] = tuple(
            L.compute_histogram(F[j], config.histogram_bins,
                                (F[j].min(), F[j].max()))
            for j in range(F.shape[0]))
    region_stats = None
    if style_mask is not None:
        region_stats = R.build_region_stats(acts, style_mask,
                                            config.histogram_bins)
    return SourceStats({t: acts[t] for t in gram_tags}, hist_targets, region_stats)


def auto_tune_clamp(g: np.ndarray, threshold: float) -> np.ndarray:
    """Rescale the gradient so its L2 norm never exceeds the threshold."""
    if threshold <= 0:
        raise ValueError("clamp threshold must be positive")
    norm = float(np.linalg.norm(g.ravel()))
    if norm <= threshold:
        return g
    return g * (threshold / norm)


def _clamped_term(name, value, grad, config, terms):
    pre = float(np.linalg.norm(grad.ravel()))
    grad = auto_tune_clamp(grad, config.clamp_thresholds[name])
    post = float(np.linalg.norm(grad.ravel()))
    terms[name] = {"value": value, "grad_norm_pre": pre, "grad_norm_post": post}
    return grad


def texture_objective(stats: SourceStats, O: np.ndarray, net: NetworkSpec,
                      config: SynthesisConfig,
                      out_mask: R.IndexedMask | None = None):
    """Combined texture loss (Gram + histogram + total variation).

    Each term's image-space gradient is computed with unit weight scale,
    clamped to its threshold, and the clamped gradients are summed.
    Returns (total value, image gradient, report row).
    """
    return _objective(stats, O, net, config, out_mask, C_acts=None)


def _objective(stats, O, net, config, out_mask, C_acts):
    gram_w = {t: w for t, w in config.gram_weights.items() if w > 0}
    hist_w = {t: w for t, w in config.histogram_weights.items() if w > 0}
    content_w = ({t: w for t, w in config.content_weights.items() if w > 0}
                 if C_acts else {})
    needed = sorted(set(gram_w) | set(hist_w) | set(content_w))
    acts, cache = (forward_with_cache(O, net, needed) if needed else ({}, None))
    terms = {}
    total_grad = np.zeros_like(O)
    total = 0.0

    if gram_w:
        if out_mask is not None:
            value, act_grads = R.localized_gram_loss(acts, out_mask,
                                                     stats.region_stats, gram_w)
        else:
            value, act_grads = L.gram_loss(stats.gram_acts, acts, gram_w)
        g = backward_to_image(O, net, act_grads, cache)
        total_grad += _clamped_term("gram", value, g, config, terms)
        total += value

    if hist_w:
        if out_mask is not None:
            value, act_grads = R.localized_histogram_loss(
                acts, out_mask, stats.region_stats, hist_w)
        else:
            value = 0.0
            act_grads = {}
            for tag, gamma in hist_w.items():
                v, g_act, _ = L.histogram_loss(acts[tag],
                                               stats.hist_targets[tag], gamma)
                value += v
                act_grads[tag] = g_act
        g = backward_to_image(O, net, act_grads, cache)
        total_grad += _clamped_term("histogram", value, g, config, terms)
        total += value

    if config.tv_weight > 0:
        value, g = L.tv_loss(O, config.tv_weight)
        total_grad += _clamped_term("tv", value, g, config, terms)
        total += value

    if content_w:
        value, act_grads = L.content_loss(C_acts, acts, content_w)
        g = backward_to_image(O, net, act_grads, cache)
        total_grad += _clamped_term("content", value, g, config, terms)
        total += value

    return total, total_grad, {"total": total, "terms": terms}


def transfer_objective(stats: SourceStats, C_acts, O: np.ndarray,
                       net: NetworkSpec, config: SynthesisConfig,
                       out_mask: R.IndexedMask | None = None):
    """Texture objective plus the content term (style transfer loss)."""
    return _objective(stats, O, net, config, out_mask, C_acts or {})


def optimize_level(init: np.ndarray, objective, iterations: int,
                   step_size: float, moment_decay=(0.9, 0.999),
                   value_range=None, eps: float = 1e-8):
    """Adaptive per-element first-order descent (moment estimates).

    The image is clamped to value_range after the final iteration only.
    Raises NumericalAbort with the partial report on non-finite values.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    b1, b2 = moment_decay
    x = np.asarray(init, dtype=np.float64).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    rows = []
    for t in range(1, iterations + 1):
        value, grad, row = objective(x)
        if not np.isfinite(value) or not np.isfinite(grad).all():
            raise NumericalAbort(
                f"non-finite loss or gradient at iteration {t}", rows)
        row["iteration"] = t
        rows.append(row)
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        x = x - step_size * m_hat / (np.sqrt(v_hat) + eps)
    if value_range is not None:
        x = np.clip(x, value_range[0], value_range[1])
    return x, rows


def white_noise(shape, value_range, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(value_range[0], value_range[1], size=shape)


def downsample_image(image: np.ndarray, times: int = 1) -> np.ndarray:
    """Pyramid reduction by repeated 2x2 average pooling."""
    for _ in range(times):
        image = pool2(image, "average")
    return image


def _check_pyramid_dims(name, h, w, levels):
    f = 2 ** (levels - 1)
    if h % f or w % f:
        raise ConfigError(
            f"{name} dims {h}x{w} not divisible by pyramid factor {f}")


def _mask_at_level(mask, level_from_finest):
    if mask is None:
        return None
    return R.downsample_mask(mask, 2 ** level_from_finest)


def synthesize_texture(source: np.ndarray, net: NetworkSpec,
                       config: SynthesisConfig,
                       style_mask: R.IndexedMask | None = None,
                       out_mask: R.IndexedMask | None = None):
    """Coarse-to-fine texture synthesis from white noise.

    The exemplar is reduced to a pyramid (width ratio two); statistics
    are computed per level from the reduced exemplar, each level is
    optimized, and bilinear upsampling seeds the next. The output size
    may differ from the exemplar's.
    """
    source = np.asarray(source, dtype=np.float64)
    out_h, out_w = config.output_size or source.shape[1:]
    levels = config.pyramid_levels
    _check_pyramid_dims("source", source.shape[1], source.shape[2], levels)
    _check_pyramid_dims("output", out_h, out_w, levels)
    _validate_mask(style_mask, "style mask", source.shape[1:])
    _validate_mask(out_mask, "output mask", (out_h, out_w), style_mask)
    iters = max(1, config.iterations // levels)
    report = []
    O = None
    for level in range(levels - 1, -1, -1):  # coarsest first
        src = downsample_image(source, level)
        stats = compute_source_stats(src, net, config,
                                     _mask_at_level(style_mask, level))
        mask_lvl = _mask_at_level(out_mask, level)
        if O is None:
            O = white_noise((net.input_channels, out_h >> level, out_w >> level),
                            config.value_range, config.seed)

        def objective(x, stats=stats, mask_lvl=mask_lvl):
            return texture_objective(stats, x, net, config, mask_lvl)

        O, rows = optimize_level(O, objective, iters, config.step_size,
                                 config.moment_decay, config.value_range)
        for row in rows:
            row["level"] = level
        report.extend(rows)
        if level > 0:
            O = upsample_bilinear2(O)
    return O, report


def style_transfer(content: np.ndarray, style: np.ndarray, net: NetworkSpec,
                   config: SynthesisConfig,
                   style_mask: R.IndexedMask | None = None,
                   out_mask: R.IndexedMask | None = None):
    """Style transfer: texture objective on the style exemplar plus a
    content term; output dims follow the content image."""
    content = np.asarray(content, dtype=np.float64)
    style = np.asarray(style, dtype=np.float64)
    levels = config.pyramid_levels
    _check_pyramid_dims("content", content.shape[1], content.shape[2], levels)
    _check_pyramid_dims("style", style.shape[1], style.shape[2], levels)
    _validate_mask(style_mask, "style mask", style.shape[1:])
    _validate_mask(out_mask, "output mask", content.shape[1:], style_mask)
    content_w = {t: w for t, w in config.content_weights.items() if w > 0}
    iters = max(1, config.iterations // levels)
    report = []
    O = None
    for level in range(levels - 1, -1, -1):
        src = downsample_image(style, level)
        cnt = downsample_image(content, level)
        stats = compute_source_stats(src, net, config,
                                     _mask_at_level(style_mask, level))
        C_acts = forward(cnt, net, sorted(content_w)) if content_w else {}
        mask_lvl = _mask_at_level(out_mask, level)
        if O is None:
            O = white_noise(cnt.shape, config.value_range, config.seed)

        def objective(x, stats=stats, C_acts=C_acts, mask_lvl=mask_lvl):
            return transfer_objective(stats, C_acts, x, net, config, mask_lvl)

        O, rows = optimize_level(O, objective, iters, config.step_size,
                                 config.moment_decay, config.value_range)
        for row in rows:
            row["level"] = level
        report.extend(rows)
        if level > 0:
            O = upsample_bilinear2(O)
    return O, report


def _validate_mask(mask, name, dims, other=None):
    if mask is None:
        if name == "output mask" and other is not None:
            raise ConfigError("style and output masks must be given together")
        return
    if name == "output mask" and other is None:
        raise ConfigError("style and output masks must be given together")
    if (mask.height, mask.width) != tuple(dims):
        raise ConfigError(
            f"{name} dims {mask.height}x{mask.width} do not match image {dims}")
