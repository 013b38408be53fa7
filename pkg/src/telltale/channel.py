"""Extraction channels: producers of extracted watermark bundles.

The oracle channel returns the ideally transformed ground-truth watermarks
plus optional clamped Gaussian noise — it isolates the reasoning engine from
embedding quality. The residual channel is a deliberately simple reference
embedding (additive low-amplitude payload mosaic) with blind or informed
extraction; its synchronicity under transformations is measured, not
guaranteed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .bundle import WatermarkBundle, load_bundle, save_bundle  # noqa: F401  (re-export)
from .imagecore import as_image, clamp01
from .transforms import ChainSpec, ParameterError, ground_truth_watermarks

DEFAULT_ALPHA = 0.04


@dataclass(frozen=True)
class NoiseSpec:
    """Additive zero-mean Gaussian extraction noise."""

    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ParameterError(f"noise sigma must be >= 0, got {self.sigma}")


def oracle_extract(refs: WatermarkBundle, chain: ChainSpec,
                   noise: NoiseSpec | None = None) -> WatermarkBundle:
    """Ground-truth watermarks plus optional clamped Gaussian noise.

    With sigma=0 the payload arrays are bit-identical to the ground truth.
    """
    gt = ground_truth_watermarks(refs, chain)
    if noise is None or noise.sigma == 0.0:
        return WatermarkBundle(sem=gt.sem, pho=gt.pho, geo=gt.geo, provenance="extracted")
    rng = np.random.default_rng(noise.seed)
    noisy = []
    for img in (gt.sem, gt.pho, gt.geo):
        noisy.append(clamp01(img + rng.normal(0.0, noise.sigma, size=img.shape)))
    return WatermarkBundle(sem=noisy[0], pho=noisy[1], geo=noisy[2], provenance="extracted")


# ---------------------------------------------------------------------------
# Residual reference embedding.
#
# Payload plane layout (all slots hold 2x-downsampled watermarks; H, W even):
#   channel 0, top-left quadrant:  semantic watermark
#   channel 0, top-right quadrant: geometric watermark
#   channel k, bottom half:        photometric channel k, tiled into the
#                                  bottom-left and bottom-right quadrants
#   channels 1-2, top half:        unused, neutral 0.5 (zero residual)
# ---------------------------------------------------------------------------

def _down2(img: np.ndarray) -> np.ndarray:
    return img[::2, ::2]


def _up2(img: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(img, 2, axis=0), 2, axis=1)


def payload_plane(refs: WatermarkBundle) -> np.ndarray:
    """Tile the three watermarks into the fixed quadrant-mosaic payload."""
    h, w = refs.height, refs.width
    if h % 2 or w % 2:
        raise ParameterError(f"residual embedding needs even dimensions, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    plane = np.full((h, w, 3), 0.5, dtype=np.float64)
    plane[:h2, :w2, 0] = _down2(as_image(refs.sem, channels=1))
    plane[:h2, w2:, 0] = _down2(as_image(refs.geo, channels=1))
    pho = as_image(refs.pho, channels=3)
    for k in range(3):
        half = _down2(pho[:, :, k])
        plane[h2:, :w2, k] = half
        plane[h2:, w2:, k] = half
    return plane


def embed_residual(x: np.ndarray, refs: WatermarkBundle,
                   alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """x_w = clamp(x + alpha*(P - 0.5)) with P the payload plane."""
    x = as_image(x, channels=3)
    if x.shape[:2] != (refs.height, refs.width):
        raise ParameterError(
            f"carrier shape {x.shape[:2]} does not match refs {(refs.height, refs.width)}")
    return clamp01(x + alpha * (payload_plane(refs) - 0.5))


def extract_residual(x_w: np.ndarray, alpha: float = DEFAULT_ALPHA,
                     carrier: np.ndarray | None = None) -> WatermarkBundle:
    """Invert the residual embedding.

    Blind mode estimates the carrier with a Gaussian blur (radius 3,
    sigma 1.5); informed mode subtracts the supplied clean carrier.
    """
    x_w = as_image(x_w, channels=3)
    h, w = x_w.shape[:2]
    if h % 2 or w % 2:
        raise ParameterError(f"residual extraction needs even dimensions, got {h}x{w}")
    if carrier is not None:
        est = as_image(carrier, channels=3)
    else:
        est = gaussian_filter(x_w, sigma=(1.5, 1.5, 0.0), truncate=2.0)
    payload = np.clip((x_w - est) / alpha + 0.5, 0.0, 1.0)
    h2, w2 = h // 2, w // 2
    sem = _up2(payload[:h2, :w2, 0])
    geo = _up2(payload[:h2, w2:, 0])
    pho = np.empty((h, w, 3), dtype=np.float64)
    for k in range(3):
        half = 0.5 * (payload[h2:, :w2, k] + payload[h2:, w2:, k])
        pho[:, :, k] = _up2(half)
    return WatermarkBundle(sem=sem, pho=pho, geo=geo, provenance="extracted")
