"""Built-in verification suite: finite-difference gradient checks for all
loss kernels composed through a small random filter bank, plus a
histogram-matching oracle comparison. Used by the `selfcheck` CLI command
and the acceptance tests.
"""

from __future__ import annotations

import numpy as np

from . import losses as L
from .network import backward_to_image, forward, random_filter_bank
from .tensor_ops import finite_diff_gradient

GRAD_TOLERANCE = 1e-4
SELFCHECK_TOPOLOGY = (3, 4, 8)  # 2-block bank, cheap enough for dense FD


def cdf_inversion_oracle(values: np.ndarray, target: L.Histogram) -> np.ndarray:
    """Reference histogram matcher: per-element quantile lookup with a
    linear scan over the target CDF. Deliberately scalar and separate
    from the production sort-based matcher."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    n = flat.size
    lo, hi = target.value_range
    width = target.bin_width
    order = np.argsort(flat, kind="stable")
    out = np.empty(n)
    cum_prev = 0.0
    bin_idx = 0
    cum = float(target.counts[0])
    for rank, pos in enumerate(order):
        q = (rank + 0.5) * target.total / n
        while cum < q and bin_idx < target.bin_count - 1:
            bin_idx += 1
            cum_prev = cum
            cum += float(target.counts[bin_idx])
        count = cum - cum_prev
        frac = (q - cum_prev) / count if count > 0 else 0.0
        out[pos] = lo + (bin_idx + min(frac, 1.0 - 1e-12)) * width
    return out.reshape(np.asarray(values).shape)


def _grad_case(name, seed, fault=None):
    """One finite-difference case: loss -> activations -> image."""
    rng = np.random.default_rng(seed)
    net = random_filter_bank(seed + 1000, SELFCHECK_TOPOLOGY)
    tags = ["relu1_1", "relu2_1"]
    weights = {"relu1_1": 1.0, "relu2_1": 0.7}
    src = rng.uniform(0.0, 1.0, (3, 8, 8))
    img = rng.uniform(0.0, 1.0, (3, 8, 8))
    S_acts = forward(src, net, tags)
    hist_targets = {
        tag: tuple(
            L.compute_histogram(F[j], 64, (F[j].min(), F[j].max()))
            for j in range(F.shape[0]))
        for tag, F in ((t, a.reshape(a.shape[0], -1)) for t, a in S_acts.items())
    }

    if name == "histogram":
        # The remap R is rank-based (piecewise constant in the values), so
        # its gradient is zero almost everywhere but finite differences can
        # straddle rank-crossing kinks. Freeze R at the base point and
        # check the gradient of the remaining quadratic through the net.
        base_acts = forward(img, net, tags)
        frozen = {tag: L.histogram_loss(base_acts[tag], hist_targets[tag],
                                        weights[tag])[2]
                  for tag in tags}

    def loss_and_grads(acts):
        if name == "gram":
            return L.gram_loss(S_acts, acts, weights)
        if name == "content":
            return L.content_loss(S_acts, acts, weights)
        if name == "mean_activation":
            return L.mean_activation_loss(S_acts, acts, weights)
        if name == "histogram":
            value = 0.0
            grads = {}
            for tag, gamma in weights.items():
                diff = acts[tag] - frozen[tag]
                norm = gamma / diff.size
                value += norm * float((diff * diff).sum())
                grads[tag] = 2.0 * norm * diff
            return value, grads
        raise ValueError(name)

    if name == "tv":
        value, grad = L.tv_loss(img, 0.8)
        fd = finite_diff_gradient(lambda x: L.tv_loss(x, 0.8)[0], img)
    else:
        acts = forward(img, net, tags)
        value, act_grads = loss_and_grads(acts)
        grad = backward_to_image(img, net, act_grads)
        fd = finite_diff_gradient(
            lambda x: loss_and_grads(forward(x, net, tags))[0], img)
    if fault == f"{name}_sign_flip":
        grad = -grad
    denom = max(float(np.abs(fd).max()), 1e-12)
    return float(np.abs(grad - fd).max()) / denom


def gradient_checks(seeds=range(20), fault=None):
    checks = []
    for name in ("gram", "histogram", "content", "mean_activation", "tv"):
        worst = max(_grad_case(name, seed, fault) for seed in seeds)
        checks.append({
            "name": f"gradient/{name}",
            "max_error": worst,
            "tolerance": GRAD_TOLERANCE,
            "passed": worst < GRAD_TOLERANCE,
        })
    return checks


def histogram_checks(pairs=50, n=4096, bins=256, seed=0):
    rng = np.random.default_rng(seed)
    worst_bin = 0.0
    worst_oracle = 0.0
    worst_self = 0.0
    order_ok = True
    for _ in range(pairs):
        values = rng.standard_normal(n) * rng.uniform(0.5, 2.0) + rng.uniform(-1, 1)
        target_vals = rng.standard_normal(n) * rng.uniform(0.5, 2.0) + rng.uniform(-1, 1)
        target = L.compute_histogram(target_vals, bins,
                                     (target_vals.min(), target_vals.max()))
        out = L.histogram_match(values, target)
        requant = L.compute_histogram(out, bins, target.value_range)
        worst_bin = max(worst_bin, float(np.abs(requant.counts - target.counts).max()))
        oracle = cdf_inversion_oracle(values, target)
        worst_oracle = max(worst_oracle, float(np.abs(out - oracle).max()))
        order_ok &= bool(
            (np.argsort(out, kind="stable") == np.argsort(values, kind="stable")).all())
        self_target = L.compute_histogram(values, bins, (values.min(), values.max()))
        self_out = L.histogram_match(values, self_target)
        worst_self = max(worst_self, float(
            np.abs(self_out - values).max() / self_target.bin_width))
    return [
        {"name": "histogram/per_bin_count", "max_error": worst_bin,
         "tolerance": 1.0, "passed": worst_bin <= 1.0},
        {"name": "histogram/oracle_agreement", "max_error": worst_oracle,
         "tolerance": 1e-9, "passed": worst_oracle <= 1e-9},
        {"name": "histogram/self_match_bin_widths", "max_error": worst_self,
         "tolerance": 1.0, "passed": worst_self <= 1.0},
        {"name": "histogram/order_preserved", "max_error": 0.0 if order_ok else 1.0,
         "tolerance": 0.0, "passed": order_ok},
    ]


def run_all(seeds=range(20), pairs=50, fault=None):
    return gradient_checks(seeds, fault) + histogram_checks(pairs)
