"""Network shapes, the identity-at-init encoder, and the residual bound."""

import pytest
import torch

from neuralcodec import models


@pytest.fixture()
def batch():
    torch.manual_seed(3)
    x = torch.rand(2, 3, 64, 64)
    w = torch.rand(2, models.WATERMARK_CHANNELS, 64, 64)
    return x, w


class TestUNet:
    def test_output_shape(self):
        net = models.UNet(3, 5)
        assert net(torch.rand(1, 3, 64, 64)).shape == (1, 5, 64, 64)

    def test_accepts_any_multiple_of_eight(self):
        net = models.UNet(3, 2)
        assert net(torch.rand(1, 3, 48, 96)).shape == (1, 2, 48, 96)

    def test_rejects_other_sizes(self):
        net = models.UNet(3, 2)
        with pytest.raises(ValueError, match="divisible by 8"):
            net(torch.rand(1, 3, 60, 60))

    def test_attention_preserves_shape(self):
        attn = models.ChannelSpatialAttention(32)
        x = torch.rand(2, 32, 16, 16)
        assert attn(x).shape == x.shape


class TestEncoder:
    def test_identity_at_init(self, batch):
        x, w = batch
        torch.manual_seed(0)
        enc = models.Encoder()
        with torch.no_grad():
            assert torch.equal(enc(x, w), x)

    def test_residual_is_bounded(self, batch):
        x, w = batch
        torch.manual_seed(0)
        enc = models.Encoder(residual_amp=0.05)
        with torch.no_grad():
            for p in enc.net.head.parameters():
                p.add_(torch.randn_like(p))
            x_w = enc(x, w)
        assert float((x_w - x).abs().max()) <= 0.05 + 1e-6
        assert float(x_w.min()) >= 0.0 and float(x_w.max()) <= 1.0

    def test_bad_amplitude_rejected(self):
        with pytest.raises(ValueError, match="residual_amp"):
            models.Encoder(residual_amp=0.0)


class TestDecoder:
    def test_output_shape_and_range(self, batch):
        x, _ = batch
        torch.manual_seed(0)
        dec = models.Decoder()
        with torch.no_grad():
            out = dec(x)
        assert out.shape == (2, models.WATERMARK_CHANNELS, 64, 64)
        assert float(out.min()) > 0.0 and float(out.max()) < 1.0

    def test_conditioning_channels_validated(self):
        with pytest.raises(ValueError, match="conditioning"):
            models.Decoder(conditioning=torch.rand(3, 64, 64))

    def test_conditioning_round_trips_through_state_dict(self):
        torch.manual_seed(0)
        cond = torch.rand(models.WATERMARK_CHANNELS, 64, 64)
        src = models.Decoder(conditioning=cond)
        dst = models.Decoder()
        dst.load_state_dict(src.state_dict())
        assert torch.equal(dst.conditioning, cond)

    def test_conditioning_shifts_output(self, batch):
        x, _ = batch
        torch.manual_seed(0)
        plain = models.Decoder()
        torch.manual_seed(0)
        conditioned = models.Decoder(
            conditioning=torch.ones(models.WATERMARK_CHANNELS, 64, 64))
        with torch.no_grad():
            assert not torch.equal(plain(x), conditioned(x))


class TestPacking:
    def test_round_trip(self):
        torch.manual_seed(1)
        sem, pho, geo = torch.rand(8, 8), torch.rand(8, 8, 3), torch.rand(8, 8)
        packed = models.pack_watermarks(sem, pho, geo)
        assert packed.shape == (5, 8, 8)
        parts = models.unpack_watermarks(packed)
        assert torch.equal(parts["sem"], sem)
        assert torch.equal(parts["pho"], pho)
        assert torch.equal(parts["geo"], geo)
