"""Secondary acceptance: the toy training run and the export round-trip.

One 2000-step joint run at 64×64 backs the training-curve, identity-chain,
and fidelity criteria; its exported bundles must drive the forensic
reasoner to a finite hypothesis through files alone.
"""

import json
import math

import numpy as np
import pytest
import torch

from telltale.cli import main as telltale_cli

import neuralcodec as nc

pytestmark = pytest.mark.acceptance

ALL_ACTIVE = ("b", "c", "h", "s", "ro", "tr", "sc", "sh")


TOY_STEPS = 2000
CHANCE_FLOOR = 0.2       # untrained decoder MAE must sit at chance level
LOSS_RATIO = 0.5         # step-2000 loss vs its step-100 moving average
IDENTITY_MAE = 0.1       # decoder MAE vs references under the identity chain
FIDELITY_PSNR = 28.0     # carrier vs marked image after the toy run
DEGENERATE_L1 = 0.01     # encoder deviation with the decoding loss disabled


def embed_eval_carriers(n=8, size=64, base=77):
    return [nc.smooth_carrier(size, np.random.SeedSequence([base, i]))
            for i in range(n)]


@pytest.fixture(scope="session")
def toy_run(refs64_dir, tmp_path_factory):
    cfg = nc.CodecConfig(size=64, steps=TOY_STEPS, batch_size=1, seed=1,
                         refs_manifest=str(refs64_dir / "manifest.json"))
    out = tmp_path_factory.mktemp("toy_run")
    result = nc.train(cfg, out)
    return cfg, result


def test_untrained_decoder_sits_at_chance_level(refs64):
    torch.manual_seed(0)
    encoder, decoder = nc.Encoder(), nc.Decoder()
    wpack = nc.pack_watermarks(refs64["sem"], refs64["pho"], refs64["geo"])
    maes = []
    with torch.no_grad():
        for i, carrier in enumerate(embed_eval_carriers(6, base=9)):
            doc = nc.sample_chain_json("custom", seed=i, custom_active=ALL_ACTIVE)
            x = carrier.permute(2, 0, 1).unsqueeze(0)
            x_w = encoder(x, wpack.unsqueeze(0))
            x_t = nc.apply_chain(x_w[0].permute(1, 2, 0), doc)
            pred = decoder(x_t.permute(2, 0, 1).unsqueeze(0))[0]
            targets = nc.watermark_targets(refs64, doc)
            maes.append(nc.mae(pred, nc.pack_watermarks(
                targets["sem"], targets["pho"], targets["geo"])))
    assert np.mean(maes) >= CHANCE_FLOOR, maes


def test_toy_loss_halves_from_its_step_100_average(toy_run):
    _, result = toy_run
    ma_100 = nc.moving_average(result.loss_log, 100)
    ma_end = nc.moving_average(result.loss_log, TOY_STEPS)
    assert ma_end <= LOSS_RATIO * ma_100, (ma_100, ma_end)


def test_identity_chain_decoder_recovers_references(toy_run, refs64):
    _, result = toy_run
    encoder, decoder, _ = nc.load_checkpoint(result.checkpoint)
    wpack = nc.pack_watermarks(refs64["sem"], refs64["pho"], refs64["geo"])
    maes = []
    with torch.no_grad():
        for carrier in embed_eval_carriers():
            x = carrier.permute(2, 0, 1).unsqueeze(0)
            pred = decoder(encoder(x, wpack.unsqueeze(0)))[0]
            maes.append(nc.mae(pred, wpack))
    assert np.mean(maes) <= IDENTITY_MAE, maes


def test_encoder_fidelity_psnr(toy_run, refs64):
    _, result = toy_run
    encoder, _, _ = nc.load_checkpoint(result.checkpoint)
    wpack = nc.pack_watermarks(refs64["sem"], refs64["pho"], refs64["geo"])
    psnrs = []
    with torch.no_grad():
        for carrier in embed_eval_carriers():
            x = carrier.permute(2, 0, 1).unsqueeze(0)
            psnrs.append(nc.psnr(encoder(x, wpack.unsqueeze(0))[0], x[0]))
    assert min(psnrs) >= FIDELITY_PSNR, psnrs


def test_degenerate_objective_restores_the_carrier(toy_run, refs64_dir, tmp_path):
    """With the decoding loss disabled, training drives ‖x_w − x‖₁ back down."""
    cfg, result = toy_run
    resumed = nc.train(nc.CodecConfig(
        size=64, steps=300, batch_size=1, seed=11, decode_weight=0.0,
        lr_warmup=0, encode_ramp=0, init_from=str(result.checkpoint),
        refs_manifest=str(refs64_dir / "manifest.json")), tmp_path / "degenerate")
    encoder, _, _ = nc.load_checkpoint(resumed.checkpoint)
    refs = {k: torch.from_numpy(np.ascontiguousarray(v, np.float32))
            for k, v in nc.load_bundle(refs64_dir / "manifest.json").items()
            if k != "source"}
    wpack = nc.pack_watermarks(refs["sem"], refs["pho"], refs["geo"])
    l1s = []
    with torch.no_grad():
        for carrier in embed_eval_carriers():
            x = carrier.permute(2, 0, 1).unsqueeze(0)
            l1s.append(nc.mae(encoder(x, wpack.unsqueeze(0)), x))
    assert np.mean(l1s) <= DEGENERATE_L1, l1s


def _assert_finite(obj, path="$"):
    if isinstance(obj, dict):
        for key, value in obj.items():
            _assert_finite(value, f"{path}.{key}")
    elif isinstance(obj, list):
        for i, value in enumerate(obj):
            _assert_finite(value, f"{path}[{i}]")
    elif isinstance(obj, float):
        assert math.isfinite(obj), f"non-finite value at {path}"


def test_exported_bundles_reason_in_the_toolkit(toy_run, refs64_dir, tmp_path):
    _, result = toy_run
    images = [nc.smooth_carrier(64, np.random.SeedSequence([31, i])).numpy()
              for i in range(2)]
    chains = [nc.sample_chain_json("Syn&B", seed=1),
              nc.sample_chain_json("Syn&Ro", seed=2)]
    manifests = nc.export_bundles(result.checkpoint, images, chains,
                                  tmp_path / "bundles")

    reason_cfg = tmp_path / "reason.json"
    reason_cfg.write_text(json.dumps({"max_iter": 40, "step": 0.01, "restarts": 2,
                                      "plateau": 15, "n_workers": 1}))
    for i, manifest in enumerate(manifests):
        out = tmp_path / f"hypothesis_{i}.json"
        assert telltale_cli(["reason", "--bundle", str(manifest),
                             "--refs", str(refs64_dir), "--config", str(reason_cfg),
                             "--out", str(out)]) == 0
        hypothesis = json.loads(out.read_text())
        assert {"geometric", "photometric"} <= set(hypothesis)
        _assert_finite(hypothesis)
