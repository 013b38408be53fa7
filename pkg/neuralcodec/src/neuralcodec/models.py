"""Encoder and decoder networks.

Both are compact U-Nets with residual blocks and (at the deeper stages)
channel–spatial attention, 32 base latent channels, and three 2× down/up
samplings — hence the divisible-by-8 constraint on image size. The encoder
maps a carrier plus the 5 watermark channels to a softly bounded residual on
the carrier, so an untrained encoder is an exact identity; the decoder maps a
(transformed) marked image, alongside constant reference-watermark
conditioning channels, back to the 5 watermark channels through a sigmoid.
Watermark channel packing is (sem, pho·3, geo) throughout.

The attention internals follow the usual channel-then-spatial gating at toy
scale; they are not claimed to reproduce any particular published variant.
"""

from __future__ import annotations

import torch
from torch import nn

WATERMARK_CHANNELS = 5  # sem (1) + pho (3) + geo (1)


class ChannelSpatialAttention(nn.Module):
    """Channel gate from pooled statistics, then a 7×7 spatial gate."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden), nn.SiLU(), nn.Linear(hidden, channels))
        self.spatial = nn.Conv2d(2, 1, kernel_size=7, padding=3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c = x.shape[:2]
        avg = x.mean(dim=(2, 3))
        peak = x.amax(dim=(2, 3))
        gate = torch.sigmoid(self.mlp(avg) + self.mlp(peak)).reshape(b, c, 1, 1)
        x = x * gate
        stats = torch.cat([x.mean(dim=1, keepdim=True),
                           x.amax(dim=1, keepdim=True)], dim=1)
        return x * torch.sigmoid(self.spatial(stats))


class ResidualBlock(nn.Module):
    """Two 3×3 convolutions with group norm and a skip, optional attention."""

    def __init__(self, channels: int, attention: bool = False):
        super().__init__()
        groups = min(8, channels)
        self.body = nn.Sequential(
            nn.GroupNorm(groups, channels), nn.SiLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.GroupNorm(groups, channels), nn.SiLU(),
            nn.Conv2d(channels, channels, 3, padding=1))
        self.attention = ChannelSpatialAttention(channels) if attention else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.body(x)
        if self.attention is not None:
            x = self.attention(x)
        return x


class UNet(nn.Module):
    """Three-level U-Net; deeper stages carry residual attention blocks."""

    def __init__(self, in_channels: int, out_channels: int, base_channels: int = 32):
        super().__init__()
        c1, c2, c3 = base_channels, base_channels * 2, base_channels * 4
        self.stem = nn.Conv2d(in_channels, c1, 3, padding=1)
        self.enc1 = ResidualBlock(c1)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc2 = ResidualBlock(c2)
        self.down2 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.enc3 = ResidualBlock(c3, attention=True)
        self.down3 = nn.Conv2d(c3, c3, 3, stride=2, padding=1)
        self.mid = ResidualBlock(c3, attention=True)
        self.up3 = nn.Conv2d(c3, c3, 3, padding=1)
        self.dec3 = nn.Sequential(nn.Conv2d(c3 * 2, c3, 3, padding=1), ResidualBlock(c3))
        self.up2 = nn.Conv2d(c3, c2, 3, padding=1)
        self.dec2 = nn.Sequential(nn.Conv2d(c2 * 2, c2, 3, padding=1), ResidualBlock(c2))
        self.up1 = nn.Conv2d(c2, c1, 3, padding=1)
        self.dec1 = nn.Sequential(nn.Conv2d(c1 * 2, c1, 3, padding=1), ResidualBlock(c1))
        self.head = nn.Conv2d(c1, out_channels, 3, padding=1)

    @staticmethod
    def _upsample(x: torch.Tensor) -> torch.Tensor:
        return nn.functional.interpolate(x, scale_factor=2, mode="nearest")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % 8 or x.shape[-2] % 8:
            raise ValueError(f"image size must be divisible by 8, got {tuple(x.shape[-2:])}")
        s1 = self.enc1(self.stem(x))
        s2 = self.enc2(self.down1(s1))
        s3 = self.enc3(self.down2(s2))
        x = self.mid(self.down3(s3))
        x = self.dec3(torch.cat([self.up3(self._upsample(x)), s3], dim=1))
        x = self.dec2(torch.cat([self.up2(self._upsample(x)), s2], dim=1))
        x = self.dec1(torch.cat([self.up1(self._upsample(x)), s1], dim=1))
        return self.head(x)


class Encoder(nn.Module):
    """x_w = clamp(x + amp·tanh(U-Net(x ∥ w)/amp)): a softly bounded,
    zero-initialized residual embedder — an untrained encoder returns the
    carrier unchanged. The tanh is scaled so realistic residuals live on its
    linear part; the bound is a rail against runaway amplitudes, not an
    operating point (a residual pinned at the bound would have vanishing
    gradients and the fidelity loss could never pull it back)."""

    def __init__(self, base_channels: int = 32, residual_amp: float = 0.3):
        super().__init__()
        if residual_amp <= 0:
            raise ValueError(f"residual_amp must be > 0, got {residual_amp}")
        self.residual_amp = float(residual_amp)
        self.net = UNet(3 + WATERMARK_CHANNELS, 3, base_channels)
        nn.init.zeros_(self.net.head.weight)
        nn.init.zeros_(self.net.head.bias)

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        r = self.net(torch.cat([x, w], dim=1))
        amp = self.residual_amp
        return (x + amp * torch.tanh(r / amp)).clamp(0.0, 1.0)


class Decoder(nn.Module):
    """ŵ = σ(U-Net(x̃_w ∥ refs)): 5 watermark channels from a transformed
    image. The reference watermark pack rides along as constant conditioning
    channels (a registered buffer, so checkpoints carry it): the decoder then
    reads the transformation from the image and modulates the provided
    patterns instead of having to memorize them in its weights."""

    def __init__(self, base_channels: int = 32, size: int = 64,
                 conditioning: torch.Tensor | None = None):
        super().__init__()
        if conditioning is None:
            conditioning = torch.zeros(WATERMARK_CHANNELS, size, size)
        if conditioning.shape[0] != WATERMARK_CHANNELS:
            raise ValueError(f"conditioning must pack {WATERMARK_CHANNELS} "
                             f"channels, got {tuple(conditioning.shape)}")
        self.register_buffer("conditioning", conditioning.detach().clone())
        self.net = UNet(3 + WATERMARK_CHANNELS, WATERMARK_CHANNELS, base_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cond = self.conditioning.unsqueeze(0).expand(x.shape[0], -1, -1, -1)
        return torch.sigmoid(self.net(torch.cat([x, cond], dim=1)))


def pack_watermarks(sem: torch.Tensor, pho: torch.Tensor, geo: torch.Tensor) -> torch.Tensor:
    """Channel-last (H,W)/(H,W,3) watermarks -> a (5,H,W) feature tensor."""
    return torch.cat([sem.unsqueeze(0), pho.permute(2, 0, 1), geo.unsqueeze(0)], dim=0)


def unpack_watermarks(w: torch.Tensor) -> dict:
    """(5,H,W) decoder output -> channel-last {"sem", "pho", "geo"} tensors."""
    return {"sem": w[0], "pho": w[1:4].permute(1, 2, 0), "geo": w[4]}
