import json

import numpy as np
import pytest

from tuckervid.modelio import ModelIOError, load_model, read_blob, save_model, write_blob
from tuckervid.network import ConvKernel, LayerSpec, NetworkSpec, forward
from tuckervid.reference import small_reference_network


def paths(tmp_path, tag="m"):
    return tmp_path / f"{tag}.model.json", tmp_path / f"{tag}.weights.bin"


class TestBlob:
    def test_values_round_trip(self, tmp_path, rng):
        values = rng.standard_normal(100).astype(np.float32).astype(np.float64)
        blob = tmp_path / "w.bin"
        write_blob(blob, values)
        np.testing.assert_array_equal(read_blob(blob), values)

    def test_checksum_detects_corruption(self, tmp_path, rng):
        blob = tmp_path / "w.bin"
        write_blob(blob, rng.standard_normal(50))
        raw = bytearray(blob.read_bytes())
        raw[-3] ^= 0xFF
        blob.write_bytes(bytes(raw))
        with pytest.raises(ModelIOError, match="checksum"):
            read_blob(blob)

    def test_bad_magic(self, tmp_path):
        blob = tmp_path / "w.bin"
        blob.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(ModelIOError, match="magic"):
            read_blob(blob)

    def test_truncated(self, tmp_path, rng):
        blob = tmp_path / "w.bin"
        write_blob(blob, rng.standard_normal(50))
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(ModelIOError):
            read_blob(blob)


class TestModelRoundTrip:
    def test_save_load_save_is_byte_identical(self, tmp_path):
        net = small_reference_network(3)
        m1, b1 = paths(tmp_path, "first")
        save_model(net, m1, b1)
        loaded = load_model(m1, b1)
        m2, b2 = paths(tmp_path, "second")
        save_model(loaded, m2, b2)
        assert m1.read_bytes() == m2.read_bytes()
        assert b1.read_bytes() == b2.read_bytes()

    def test_forward_agrees_after_reload(self, tmp_path, rng):
        net = small_reference_network(4)
        manifest, blob = paths(tmp_path)
        save_model(net, manifest, blob)
        loaded = load_model(manifest, blob)
        x = rng.standard_normal(net.input_shape)
        # Weights quantize to float32 on disk; outputs agree to that precision.
        a, b = forward(net, x), forward(loaded, x)
        assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-5

    def test_kernel_element_order(self, tmp_path):
        # Serialized order is (t, s, i, j, l) slowest-to-fastest.
        weights = np.arange(2 * 1 * 1 * 3 * 2, dtype=float).reshape(2, 1, 1, 3, 2)
        net = NetworkSpec(
            layers=[LayerSpec.conv3d("c", ConvKernel(weights))],
            input_shape=(2, 1, 1, 3),
        )
        manifest, blob = paths(tmp_path)
        save_model(net, manifest, blob)
        stored = read_blob(blob)
        np.testing.assert_array_equal(
            stored, weights.transpose(4, 3, 0, 1, 2).ravel()
        )

    def test_geometry_only_load(self, tmp_path):
        net = small_reference_network(5)
        manifest, blob = paths(tmp_path)
        save_model(net, manifest, blob)
        skeleton = load_model(manifest, None)
        assert [l.name for l in skeleton.layers] == [l.name for l in net.layers]
        assert not skeleton.layer("C1").kernel.weights.any()

    def test_empty_network(self, tmp_path):
        net = NetworkSpec(layers=[], input_shape=(1, 1, 1, 1))
        manifest, blob = paths(tmp_path)
        save_model(net, manifest, blob)
        loaded = load_model(manifest, blob)
        assert loaded.layers == []


class TestManifestValidation:
    def _write_pair(self, tmp_path):
        net = small_reference_network(6)
        manifest, blob = paths(tmp_path)
        save_model(net, manifest, blob)
        return manifest, blob

    def test_overlapping_segments_rejected(self, tmp_path):
        manifest, blob = self._write_pair(tmp_path)
        data = json.loads(manifest.read_text())
        conv_records = [r for r in data["layers"] if "offset" in r]
        conv_records[1]["offset"] = conv_records[0]["offset"]
        manifest.write_text(json.dumps(data))
        with pytest.raises(ModelIOError, match="overlap"):
            load_model(manifest, blob)

    def test_wrong_length_rejected(self, tmp_path):
        manifest, blob = self._write_pair(tmp_path)
        data = json.loads(manifest.read_text())
        record = next(r for r in data["layers"] if "length" in r)
        record["length"] += 1
        manifest.write_text(json.dumps(data))
        with pytest.raises(ModelIOError, match="values"):
            load_model(manifest, blob)

    def test_blob_too_short_rejected(self, tmp_path, rng):
        manifest, blob = self._write_pair(tmp_path)
        write_blob(blob, rng.standard_normal(10))
        with pytest.raises(ModelIOError, match="manifest needs"):
            load_model(manifest, blob)

    def test_bad_version(self, tmp_path):
        manifest, blob = self._write_pair(tmp_path)
        data = json.loads(manifest.read_text())
        data["format_version"] = 99
        manifest.write_text(json.dumps(data))
        with pytest.raises(ModelIOError, match="version"):
            load_model(manifest, blob)

    def test_invalid_json(self, tmp_path):
        manifest = tmp_path / "bad.json"
        manifest.write_text("{not json")
        with pytest.raises(ModelIOError, match="JSON"):
            load_model(manifest, None)

    def test_inconsistent_shapes_rejected(self, tmp_path):
        manifest, blob = self._write_pair(tmp_path)
        data = json.loads(manifest.read_text())
        data["input_shape"] = [4, 4, 4, 2]  # C1 expects 4 channels
        manifest.write_text(json.dumps(data))
        with pytest.raises(ModelIOError, match="shapes"):
            load_model(manifest, blob)
