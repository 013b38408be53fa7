"""The file boundary: TTWM payloads, bundle manifests, chain documents."""

import json

import numpy as np
import pytest

import telltale

from neuralcodec import tellio


class TestTTWM:
    def test_round_trip_rgb(self, tmp_path, rng):
        img = rng.random((5, 7, 3)).astype(np.float32)
        tellio.write_ttwm(img, tmp_path / "a.ttwm")
        back = tellio.read_ttwm(tmp_path / "a.ttwm")
        assert back.dtype == np.float32
        assert np.array_equal(back, img)

    def test_round_trip_grey(self, tmp_path, rng):
        img = rng.random((4, 6))
        tellio.write_ttwm(img, tmp_path / "a.ttwm")
        assert np.array_equal(tellio.read_ttwm(tmp_path / "a.ttwm"),
                              img.astype(np.float32))

    def test_single_channel_axis_is_squeezed(self, tmp_path, rng):
        img = rng.random((4, 4, 1))
        tellio.write_ttwm(img, tmp_path / "a.ttwm")
        assert tellio.read_ttwm(tmp_path / "a.ttwm").shape == (4, 4)

    def test_toolkit_reads_our_files(self, tmp_path, rng):
        img = rng.random((6, 5, 3)).astype(np.float32)
        tellio.write_ttwm(img, tmp_path / "a.ttwm")
        assert np.array_equal(telltale.read_ttwm(tmp_path / "a.ttwm"), img)

    def test_we_read_toolkit_files(self, tmp_path, rng):
        img = rng.random((6, 5)).astype(np.float32)
        telltale.write_ttwm(img, tmp_path / "a.ttwm")
        assert np.array_equal(tellio.read_ttwm(tmp_path / "a.ttwm"), img)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "a.ttwm"
        path.write_bytes(b"NOPE" + bytes(13))
        with pytest.raises(tellio.FormatError, match="magic"):
            tellio.read_ttwm(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "a.ttwm"
        path.write_bytes(b"TTWM")
        with pytest.raises(tellio.FormatError, match="truncated"):
            tellio.read_ttwm(path)

    def test_truncated_payload_rejected(self, tmp_path, rng):
        path = tmp_path / "a.ttwm"
        tellio.write_ttwm(rng.random((4, 4)), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(tellio.FormatError, match="bytes"):
            tellio.read_ttwm(path)

    def test_bad_shape_rejected(self, rng, tmp_path):
        with pytest.raises(tellio.FormatError, match="shape"):
            tellio.write_ttwm(rng.random((4, 4, 2)), tmp_path / "a.ttwm")


class TestBundles:
    def test_round_trip(self, tmp_path, rng):
        sem, pho, geo = rng.random((8, 9)), rng.random((8, 9, 3)), rng.random((8, 9))
        manifest = tellio.save_bundle(sem, pho, geo, tmp_path / "b")
        back = tellio.load_bundle(manifest)
        assert back["source"] == "extracted"
        assert np.array_equal(back["pho"], pho.astype(np.float32))

    def test_load_accepts_directory(self, tmp_path, rng):
        tellio.save_bundle(rng.random((4, 4)), rng.random((4, 4, 3)),
                           rng.random((4, 4)), tmp_path / "b")
        assert tellio.load_bundle(tmp_path / "b")["sem"].shape == (4, 4)

    def test_toolkit_loads_our_bundles(self, tmp_path, rng):
        manifest = tellio.save_bundle(rng.random((4, 4)), rng.random((4, 4, 3)),
                                      rng.random((4, 4)), tmp_path / "b")
        bundle = telltale.load_bundle(manifest)
        assert bundle.provenance == "extracted"
        assert bundle.height == bundle.width == 4

    def test_we_load_toolkit_bundles(self, refs64_dir):
        refs = tellio.load_bundle(refs64_dir / "manifest.json")
        assert refs["source"] == "reference"
        assert refs["pho"].shape == (64, 64, 3)
        assert refs["sem"].shape == refs["geo"].shape == (64, 64)

    def test_mismatched_members_rejected(self, tmp_path, rng):
        with pytest.raises(tellio.FormatError, match="disagree"):
            tellio.save_bundle(rng.random((4, 4)), rng.random((5, 4, 3)),
                               rng.random((4, 4)), tmp_path / "b")

    def test_bad_source_rejected(self, tmp_path, rng):
        with pytest.raises(tellio.FormatError, match="source"):
            tellio.save_bundle(rng.random((4, 4)), rng.random((4, 4, 3)),
                               rng.random((4, 4)), tmp_path / "b", source="guess")

    def test_missing_manifest_key_rejected(self, tmp_path, rng):
        manifest = tellio.save_bundle(rng.random((4, 4)), rng.random((4, 4, 3)),
                                      rng.random((4, 4)), tmp_path / "b")
        obj = json.loads(manifest.read_text())
        del obj["geo"]
        manifest.write_text(json.dumps(obj))
        with pytest.raises(tellio.FormatError, match="missing key"):
            tellio.load_bundle(manifest)

    def test_payload_shape_mismatch_rejected(self, tmp_path, rng):
        manifest = tellio.save_bundle(rng.random((4, 4)), rng.random((4, 4, 3)),
                                      rng.random((4, 4)), tmp_path / "b")
        tellio.write_ttwm(rng.random((5, 5)), tmp_path / "b" / "sem.ttwm")
        with pytest.raises(tellio.FormatError, match="does not match"):
            tellio.load_bundle(manifest)


class TestChainDocuments:
    def test_round_trip(self, tmp_path):
        obj = {"photometric": {"order": ["b", "c", "h", "s"],
                               "params": {"b": 1.1, "c": 1.0, "h": 0.0, "s": 1.0}}}
        tellio.save_chain_json(obj, tmp_path / "c.json")
        assert tellio.load_chain_json(tmp_path / "c.json") == obj

    def test_unreadable_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{nope")
        with pytest.raises(tellio.FormatError, match="unreadable"):
            tellio.load_chain_json(path)

    def test_non_object_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("[1, 2]")
        with pytest.raises(tellio.FormatError, match="object"):
            tellio.load_chain_json(path)
