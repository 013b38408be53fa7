"""Config validation, losses, carriers, and short end-to-end training runs."""

import json

import numpy as np
import pytest
import torch
from PIL import Image

import neuralcodec as nc
from neuralcodec.tellio import FormatError


@pytest.fixture()
def cfg64(refs64_dir):
    def make(**overrides):
        kwargs = dict(size=64, steps=3, batch_size=1, seed=5,
                      refs_manifest=str(refs64_dir / "manifest.json"))
        kwargs.update(overrides)
        return nc.CodecConfig(**kwargs)

    return make


class TestCodecConfig:
    @pytest.mark.parametrize("field,value,match", [
        ("size", 60, "multiple of 8"),
        ("size", 0, "multiple of 8"),
        ("base_channels", 4, "base_channels"),
        ("lr", 0.0, "lr"),
        ("steps", -1, "steps"),
        ("batch_size", 0, "batch_size"),
        ("encode_weight", -0.5, "weights"),
        ("decode_weight", -1.0, "weights"),
        ("encode_ramp", -1, "encode_ramp"),
        ("lr_schedule", "linear", "lr_schedule"),
        ("lr_warmup", -1, "lr_warmup"),
        ("residual_amp", 0.0, "residual_amp"),
        ("chain_family", "Syn&Zoom", "unknown chain family"),
    ])
    def test_bad_values_rejected(self, field, value, match):
        with pytest.raises(FormatError, match=match):
            nc.CodecConfig(**{field: value})

    def test_defaults_are_valid(self):
        cfg = nc.CodecConfig()
        assert cfg.size == 64
        assert cfg.base_channels == 32
        assert cfg.chain_family == "mixed"
        assert set(cfg.custom_active) == set(nc.PHO_MEMBERS) | set(nc.GEO_MEMBERS)

    def test_resolved_ranges_default(self):
        assert nc.CodecConfig().resolved_ranges() == nc.DEFAULT_RANGES

    def test_resolved_ranges_dict_and_path(self, tmp_path):
        assert nc.CodecConfig(ranges={"b": [0.9, 1.1]}).resolved_ranges() == {
            "b": (0.9, 1.1)}
        path = tmp_path / "r.json"
        path.write_text(json.dumps({"h": [-0.1, 0.1]}))
        assert nc.CodecConfig(ranges=str(path)).resolved_ranges() == {"h": (-0.1, 0.1)}


class TestCarriers:
    def test_smooth_carrier_is_deterministic_and_bounded(self):
        a = nc.smooth_carrier(64, 9)
        b = nc.smooth_carrier(64, 9)
        assert torch.equal(a, b)
        assert a.shape == (64, 64, 3) and a.dtype == torch.float32
        assert float(a.min()) >= 0.15 - 1e-6 and float(a.max()) <= 0.85 + 1e-6

    def test_dataset_directory_carriers(self, tmp_path, rng):
        for i in range(3):
            arr = (rng.random((32, 40, 3)) * 255).astype(np.uint8)
            Image.fromarray(arr).save(tmp_path / f"img_{i}.png")
        source = nc.CarrierSource(nc.CodecConfig(dataset_dir=str(tmp_path), size=64))
        img = source.get(0)
        assert img.shape == (64, 64, 3)
        assert torch.equal(img, source.get(0))

    def test_empty_dataset_directory_rejected(self, tmp_path):
        with pytest.raises(FormatError, match="no carrier images"):
            nc.CarrierSource(nc.CodecConfig(dataset_dir=str(tmp_path)))

    def test_ttwm_carrier_loads(self, tmp_path, rng):
        nc.write_ttwm(rng.random((64, 64, 3)), tmp_path / "c.ttwm")
        img = nc.load_carrier_image(tmp_path / "c.ttwm", 64)
        assert img.shape == (64, 64, 3)


class TestLossesAndHelpers:
    def test_encoding_loss_hand_value(self):
        x = torch.zeros(1, 3, 2, 2)
        x_w = torch.full((1, 3, 2, 2), 0.5)
        x_w[0, 0, 0, 0] = 1.0
        # mean |diff| = (11*0.5 + 1.0) / 12, max |diff| = 1.0
        expected = (11 * 0.5 + 1.0) / 12 + 1.0
        assert abs(float(nc.encoding_loss(x_w, x)) - expected) < 1e-6

    def test_decoding_loss_hand_value(self):
        pred = torch.zeros(1, 5, 2, 2)
        target = torch.zeros(1, 5, 2, 2)
        target[0, 0] = 1.0    # sem off by 1 -> term 1
        target[0, 2] = 0.6    # one pho channel off by 0.6 -> term 0.2
        assert abs(float(nc.decoding_loss(pred, target)) - 1.2) < 1e-6

    def test_moving_average(self):
        log = [4.0, 2.0, 6.0, 0.0]
        assert nc.moving_average(log, 2, window=2) == 3.0
        assert nc.moving_average(log, 4, window=2) == 3.0
        assert nc.moving_average(log, 4, window=100) == 3.0
        with pytest.raises(ValueError):
            nc.moving_average(log, 5)

    def test_psnr_and_mae(self):
        a = torch.zeros(4, 4)
        assert nc.psnr(a, a) == float("inf")
        b = torch.full((4, 4), 0.1)
        assert abs(nc.psnr(a, b) - 20.0) < 1e-6  # float32 squares
        assert abs(nc.mae(a, b) - 0.1) < 1e-7

    def test_load_references_requires_manifest(self):
        with pytest.raises(FormatError, match="refs_manifest"):
            nc.load_references(nc.CodecConfig())

    def test_load_references_checks_size(self, refs64_dir):
        cfg = nc.CodecConfig(size=128, refs_manifest=str(refs64_dir / "manifest.json"))
        with pytest.raises(FormatError, match="config wants"):
            nc.load_references(cfg)


class TestTrainingLoop:
    def test_short_run_writes_checkpoint_and_log(self, cfg64, tmp_path):
        result = nc.train(cfg64(), tmp_path / "run")
        assert len(result.loss_log) == 3
        assert all(np.isfinite(result.loss_log))
        assert result.checkpoint.exists()
        log = json.loads((tmp_path / "run" / "loss_log.json").read_text())
        assert log["loss"] == result.loss_log

        encoder, decoder, payload = nc.load_checkpoint(result.checkpoint)
        assert payload["steps"] == 3
        assert payload["config"]["size"] == 64
        assert payload["refs"]["pho"].shape == (64, 64, 3)

    def test_runs_are_deterministic(self, cfg64, tmp_path):
        a = nc.train(cfg64(), tmp_path / "a")
        b = nc.train(cfg64(), tmp_path / "b")
        assert a.loss_log == b.loss_log

    def test_zero_steps_checkpoints_the_init(self, cfg64, tmp_path):
        result = nc.train(cfg64(steps=0), tmp_path / "run")
        assert result.loss_log == []
        encoder, _, _ = nc.load_checkpoint(result.checkpoint)
        x = torch.rand(1, 3, 64, 64)
        w = torch.rand(1, 5, 64, 64)
        with torch.no_grad():
            assert torch.equal(encoder(x, w), x)

    def test_decoder_is_conditioned_on_references(self, cfg64, tmp_path):
        result = nc.train(cfg64(steps=0), tmp_path / "run")
        _, decoder, payload = nc.load_checkpoint(result.checkpoint)
        refs = {k: torch.from_numpy(v) for k, v in payload["refs"].items()}
        expected = nc.pack_watermarks(refs["sem"], refs["pho"], refs["geo"])
        assert torch.equal(decoder.conditioning, expected)

    def test_warm_start_resumes_weights(self, cfg64, tmp_path):
        first = nc.train(cfg64(steps=2), tmp_path / "a")
        resumed = nc.train(cfg64(steps=0, init_from=str(first.checkpoint)),
                           tmp_path / "b")
        enc_a, _, _ = nc.load_checkpoint(first.checkpoint)
        enc_b, _, _ = nc.load_checkpoint(resumed.checkpoint)
        for pa, pb in zip(enc_a.parameters(), enc_b.parameters()):
            assert torch.equal(pa, pb)

    def test_dataset_directory_run(self, cfg64, tmp_path, rng):
        data = tmp_path / "data"
        data.mkdir()
        for i in range(2):
            arr = (rng.random((64, 64, 3)) * 255).astype(np.uint8)
            Image.fromarray(arr).save(data / f"img_{i}.png")
        result = nc.train(cfg64(steps=2, dataset_dir=str(data)), tmp_path / "run")
        assert len(result.loss_log) == 2
