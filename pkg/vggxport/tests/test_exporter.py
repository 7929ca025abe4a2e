"""Tests for the VGG-19 weight exporter.

A real pretrained checkpoint is not available offline, so these tests run
against a synthetic, correctly shaped VGG-19 state dict. The cross-check
against the engine uses only the exported artifacts (weight file + fixture
JSON), i.e. the same interface a real checkpoint would exercise.
"""

import json
from pathlib import Path

import numpy as np
import pytest
import torch

from vggxport.exporter import (
    FIXTURE_TOLERANCE,
    MissingLayerError,
    ShapeAnomalyError,
    VGG19_CONV_INDICES,
    VGG19_CONV_SHAPES,
    emit_fixture,
    export_weights,
    load_checkpoint,
    load_fixture_image,
    reference_activations,
)
from vggxport import cli

FIXTURE_IMAGE = Path(__file__).resolve().parents[1] / "src/vggxport/assets/fixture.png"


def synthetic_state_dict(seed=0, scale=0.05):
    """A VGG-19-shaped random state dict (small weights keep activations
    in a float32-friendly range through ten conv layers)."""
    gen = torch.Generator().manual_seed(seed)
    state = {}
    for idx, (out_c, in_c) in zip(VGG19_CONV_INDICES, VGG19_CONV_SHAPES):
        state[f"features.{idx}.weight"] = torch.randn(
            (out_c, in_c, 3, 3), generator=gen) * scale
        state[f"features.{idx}.bias"] = torch.randn((out_c,), generator=gen) * scale
    return state


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "vgg19.pth"
    torch.save(synthetic_state_dict(), path)
    return path


class TestLoadCheckpoint:
    def test_valid(self, checkpoint):
        layers = load_checkpoint(checkpoint)
        assert set(layers) == set(VGG19_CONV_INDICES)
        assert layers[0][0].shape == (64, 3, 3, 3)

    def test_missing_layer(self, tmp_path):
        state = synthetic_state_dict()
        del state["features.34.weight"]
        path = tmp_path / "trunc.pth"
        torch.save(state, path)
        with pytest.raises(MissingLayerError, match="features.34"):
            load_checkpoint(path)

    def test_shape_anomaly(self, tmp_path):
        state = synthetic_state_dict()
        state["features.0.weight"] = torch.zeros((64, 3, 5, 5))
        path = tmp_path / "bad.pth"
        torch.save(state, path)
        with pytest.raises(ShapeAnomalyError, match="features.0"):
            load_checkpoint(path)

    def test_nested_state_dict_accepted(self, tmp_path):
        path = tmp_path / "nested.pth"
        torch.save({"state_dict": synthetic_state_dict()}, path)
        assert set(load_checkpoint(path)) == set(VGG19_CONV_INDICES)


class TestExportWeights:
    def test_round_trip_loads_in_engine(self, checkpoint, tmp_path):
        histotex = pytest.importorskip("histotex")
        out = tmp_path / "w.htxw"
        summary = export_weights(checkpoint, out)
        net = histotex.load_network(out)
        assert set(net.tags) == {"relu1_1", "relu2_1", "relu3_1", "relu4_1"}
        assert net.preprocess_mean == pytest.approx((0.485, 0.456, 0.406))
        assert summary["layers"][0] == {"layer": "conv1_1",
                                        "shape": [64, 3, 3, 3]}

    def test_digest_stable_across_runs(self, checkpoint, tmp_path):
        a = export_weights(checkpoint, tmp_path / "a.htxw")
        b = export_weights(checkpoint, tmp_path / "b.htxw")
        assert a["digest"] == b["digest"]


class TestEmitFixture:
    def test_regenerated_bytes_identical(self, checkpoint, tmp_path):
        a = emit_fixture(checkpoint, FIXTURE_IMAGE, tmp_path / "a.json")
        b = emit_fixture(checkpoint, FIXTURE_IMAGE, tmp_path / "b.json")
        assert a["digest"] == b["digest"]
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_contains_all_four_tags(self, checkpoint, tmp_path):
        emit_fixture(checkpoint, FIXTURE_IMAGE, tmp_path / "fx.json")
        doc = json.loads((tmp_path / "fx.json").read_text())
        assert set(doc["activations"]) == {"relu1_1", "relu2_1",
                                           "relu3_1", "relu4_1"}
        assert doc["tolerance"] == FIXTURE_TOLERANCE
        assert np.asarray(doc["image"]).shape == (3, 32, 32)

    def test_mismatched_image_dims_rejected(self, checkpoint, tmp_path):
        from PIL import Image
        bad = tmp_path / "bad.png"
        Image.new("RGB", (16, 16)).save(bad)
        with pytest.raises(ValueError, match="32x32"):
            emit_fixture(checkpoint, bad, tmp_path / "fx.json")


class TestEngineCrossCheck:
    def test_forward_matches_reference(self, checkpoint, tmp_path):
        histotex = pytest.importorskip("histotex")
        weight_path = tmp_path / "w.htxw"
        fixture_path = tmp_path / "fx.json"
        export_weights(checkpoint, weight_path)
        emit_fixture(checkpoint, FIXTURE_IMAGE, fixture_path)

        net = histotex.load_network(weight_path)
        doc = json.loads(fixture_path.read_text())
        image = np.asarray(doc["image"], dtype=np.float64)
        tags = sorted(doc["activations"])
        acts = histotex.forward(image, net, tags)
        for tag in tags:
            ref = np.asarray(doc["activations"][tag], dtype=np.float64)
            scale = max(float(np.abs(ref).max()), 1e-12)
            dev = float(np.abs(acts[tag] - ref).max()) / scale
            assert dev < doc["tolerance"], (tag, dev)

    def test_activation_shapes(self, checkpoint):
        layers = load_checkpoint(checkpoint)
        image = load_fixture_image(FIXTURE_IMAGE)
        acts = reference_activations(layers, image)
        assert acts["relu1_1"].shape == (64, 32, 32)
        assert acts["relu2_1"].shape == (128, 16, 16)
        assert acts["relu3_1"].shape == (256, 8, 8)
        assert acts["relu4_1"].shape == (512, 4, 4)


class TestCli:
    def test_export_and_fixture(self, checkpoint, tmp_path, capsys):
        out = tmp_path / "w.htxw"
        assert cli.main(["export", "--checkpoint", str(checkpoint),
                         "--out", str(out)]) == 0
        assert "conv4_1" in capsys.readouterr().out
        fx = tmp_path / "fx.json"
        assert cli.main(["fixture", "--checkpoint", str(checkpoint),
                         "--image", str(FIXTURE_IMAGE), "--out", str(fx)]) == 0
        assert fx.exists()

    def test_missing_checkpoint_is_io_error(self, tmp_path):
        assert cli.main(["export", "--checkpoint", "/nonexistent.pth",
                         "--out", str(tmp_path / "w.htxw")]) == 3

    def test_bad_checkpoint_is_checkpoint_error(self, tmp_path):
        state = synthetic_state_dict()
        del state["features.0.weight"]
        path = tmp_path / "bad.pth"
        torch.save(state, path)
        assert cli.main(["export", "--checkpoint", str(path),
                         "--out", str(tmp_path / "w.htxw")]) == 2
