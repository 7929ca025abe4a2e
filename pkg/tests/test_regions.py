"""Unit tests for indexed masks and localized (per-region) losses."""

import numpy as np
import pytest

from histotex.losses import gram_loss, histogram_loss, compute_histogram
from histotex.network import ConfigError, forward, random_filter_bank
from histotex.regions import (
    IndexedMask,
    build_region_stats,
    downsample_mask,
    localized_gram_loss,
    localized_histogram_loss,
)
from histotex.tensor_ops import ShapeError, finite_diff_gradient


def _halves_mask(h, w, regions=2):
    idx = np.zeros((h, w), dtype=int)
    idx[:, w // 2:] = regions - 1
    return IndexedMask(idx, regions)


class TestIndexedMask:
    def test_basic(self):
        m = IndexedMask(np.zeros((4, 6), dtype=int), 1)
        assert (m.height, m.width) == (4, 6)
        np.testing.assert_array_equal(m.occupied(), [True])

    def test_out_of_range_ids_rejected(self):
        with pytest.raises(ValueError):
            IndexedMask(np.array([[0, 3]]), 2)

    def test_non_2d_rejected(self):
        with pytest.raises(ShapeError):
            IndexedMask(np.zeros((2, 2, 2), dtype=int), 1)

    def test_from_gray_levels_ascending(self):
        gray = np.array([[200, 0], [100, 200]])
        m = IndexedMask.from_gray_levels(gray)
        assert m.region_count == 3
        np.testing.assert_array_equal(m.indices, [[2, 0], [1, 2]])

    def test_occupied_reports_missing_region(self):
        m = IndexedMask(np.zeros((2, 2), dtype=int), 3)
        np.testing.assert_array_equal(m.occupied(), [True, False, False])


class TestDownsampleMask:
    def test_top_left_rule(self):
        idx = np.array([[0, 1], [1, 1]])
        with pytest.warns(UserWarning, match="vanished"):
            m = downsample_mask(IndexedMask(idx, 2), 2)
        np.testing.assert_array_equal(m.indices, [[0]])
        assert m.region_count == 2

    def test_identity_factor(self):
        m = IndexedMask(np.zeros((4, 4), dtype=int), 1)
        assert downsample_mask(m, 1) is m

    def test_vanished_region_warns(self):
        idx = np.zeros((4, 4), dtype=int)
        idx[1, 1] = 1  # never a top-left sample
        with pytest.warns(UserWarning, match="vanished"):
            coarse = downsample_mask(IndexedMask(idx, 2), 2)
        np.testing.assert_array_equal(coarse.occupied(), [True, False])

    def test_bad_factor_rejected(self):
        m = IndexedMask(np.zeros((4, 4), dtype=int), 1)
        with pytest.raises(ValueError):
            downsample_mask(m, 3)

    def test_indivisible_dims_rejected(self):
        m = IndexedMask(np.zeros((6, 6), dtype=int), 1)
        with pytest.raises(ShapeError):
            downsample_mask(m, 4)


class TestBuildRegionStats:
    def test_single_region_matches_global(self, rng):
        acts = {"a": rng.uniform(size=(3, 4, 4))}
        mask = IndexedMask(np.zeros((4, 4), dtype=int), 1)
        stats = build_region_stats(acts, mask, bin_count=16)
        region = stats.per_tag["a"][0]
        F = acts["a"].reshape(3, -1)
        np.testing.assert_array_equal(region.gram.entries, F @ F.T)
        assert region.pixel_count == 16
        expected = compute_histogram(F[0], 16, (F[0].min(), F[0].max()))
        np.testing.assert_array_equal(region.histograms[0].counts,
                                      expected.counts)

    def test_empty_region_stats(self, rng):
        acts = {"a": rng.uniform(size=(2, 4, 4))}
        mask = IndexedMask(np.zeros((4, 4), dtype=int), 2)
        stats = build_region_stats(acts, mask)
        assert stats.per_tag["a"][1].empty

    def test_mask_auto_downsampled_to_layer(self, rng):
        net = random_filter_bank(0, (3, 4, 8))
        img = rng.uniform(size=(3, 8, 8))
        acts = forward(img, net, ["relu1_1", "relu2_1"])
        mask = _halves_mask(8, 8)
        stats = build_region_stats(acts, mask)
        # relu2_1 lives at 4x4; each half keeps 8 pixels
        assert stats.per_tag["relu2_1"][0].pixel_count == 8
        assert stats.per_tag["relu2_1"][1].pixel_count == 8


class TestLocalizedGramLoss:
    def test_single_region_reduces_bit_identically(self, rng):
        S = {"a": rng.uniform(size=(3, 4, 4))}
        O = {"a": rng.uniform(size=(3, 4, 4))}
        mask = IndexedMask(np.zeros((4, 4), dtype=int), 1)
        stats = build_region_stats(S, mask)
        v_loc, g_loc = localized_gram_loss(O, mask, stats, {"a": 1.3})
        v_glob, g_glob = gram_loss(S, O, {"a": 1.3})
        assert v_loc == v_glob
        assert np.array_equal(g_loc["a"], g_glob["a"])

    def test_two_region_gradient_matches_finite_differences(self, rng):
        S = {"a": rng.uniform(size=(2, 4, 4))}
        mask = _halves_mask(4, 4)
        stats = build_region_stats(S, mask)
        O = rng.uniform(size=(2, 4, 4))
        _, grads = localized_gram_loss({"a": O}, mask, stats, {"a": 1.0})
        fd = finite_diff_gradient(
            lambda z: localized_gram_loss({"a": z}, mask, stats, {"a": 1.0})[0], O)
        np.testing.assert_allclose(grads["a"], fd, atol=1e-7)

    def test_region_count_mismatch_rejected(self, rng):
        S = {"a": rng.uniform(size=(2, 4, 4))}
        one = IndexedMask(np.zeros((4, 4), dtype=int), 1)
        stats = build_region_stats(S, one)
        with pytest.raises(ConfigError):
            localized_gram_loss({"a": rng.uniform(size=(2, 4, 4))},
                                _halves_mask(4, 4), stats, {"a": 1.0})

    def test_missing_tag_rejected(self, rng):
        mask = IndexedMask(np.zeros((4, 4), dtype=int), 1)
        stats = build_region_stats({"a": rng.uniform(size=(2, 4, 4))}, mask)
        with pytest.raises(ConfigError):
            localized_gram_loss({"b": rng.uniform(size=(2, 4, 4))}, mask,
                                stats, {"b": 1.0})


class TestLocalizedHistogramLoss:
    def test_single_region_reduces_bit_identically(self, rng):
        S = {"a": rng.uniform(size=(3, 4, 4))}
        O = {"a": rng.uniform(size=(3, 4, 4))}
        mask = IndexedMask(np.zeros((4, 4), dtype=int), 1)
        stats = build_region_stats(S, mask, bin_count=32)
        v_loc, g_loc = localized_histogram_loss(O, mask, stats, {"a": 0.9})
        F = S["a"].reshape(3, -1)
        targets = tuple(
            compute_histogram(F[j], 32, (F[j].min(), F[j].max()))
            for j in range(3))
        v_glob, g_glob, _ = histogram_loss(O["a"], targets, 0.9)
        assert v_loc == v_glob
        assert np.array_equal(g_loc["a"], g_glob)

    def test_two_regions_matched_independently(self, rng):
        # Region 0 of the style is all low values, region 1 all high; after
        # matching, each output region's remap targets stay in their band.
        S = {"a": np.concatenate([np.full((1, 4, 2), 0.1),
                                  np.full((1, 4, 2), 0.9)], axis=2)}
        mask = _halves_mask(4, 4)
        stats = build_region_stats(S, mask, bin_count=8)
        O = {"a": rng.uniform(size=(1, 4, 4))}
        value, grads = localized_histogram_loss(O, mask, stats, {"a": 1.0})
        R = O["a"] - grads["a"] * O["a"].size / 2.0  # invert grad relation
        assert np.allclose(R[0, :, :2], 0.1, atol=0.2)
        assert np.allclose(R[0, :, 2:], 0.9, atol=0.2)

    def test_gradient_zero_in_empty_output_region(self, rng):
        S = {"a": rng.uniform(size=(2, 4, 4))}
        style_mask = _halves_mask(4, 4)
        stats = build_region_stats(S, style_mask, bin_count=8)
        out_mask = IndexedMask(np.zeros((4, 4), dtype=int), 2)
        O = {"a": rng.uniform(size=(2, 4, 4))}
        value, grads = localized_histogram_loss(O, out_mask, stats, {"a": 1.0})
        assert np.isfinite(value)
        assert grads["a"].shape == O["a"].shape
