"""Construction of the three tell-tale reference watermarks.

Pixel grids are normalized so the corner pixels land exactly on ±1:
``x̄ = (2x − (W−1))/(W−1)`` (0-based column x; same for rows). The numerator
is an integer, so mirrored pixels get exactly negated coordinates and the
geometric pattern is point-symmetric to the last bit. Odd-sized images have
an exact centre pixel at (0, 0).

The interference frequency ξ has units of cycles per normalized unit, which
keeps the geometric pattern resolution-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import WatermarkBundle
from .imagecore import hls_to_rgb

SQRT2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class PatternConfig:
    """Geometry and frequency parameters for watermark construction."""

    height: int = 128
    width: int = 128
    delta_phi: float = 0.0   # hue rotation offset, radians
    xi_min: float = 2.0      # min interference frequency, cycles/unit
    xi_max: float = 10.0     # max interference frequency, cycles/unit

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError(f"pattern size must be >= 2, got {self.height}x{self.width}")
        if self.xi_min < 0 or self.xi_max < self.xi_min:
            raise ValueError(f"need 0 <= xi_min <= xi_max, got [{self.xi_min}, {self.xi_max}]")


@dataclass(frozen=True)
class PolarField:
    """Per-pixel polar coordinates over the normalized grid."""

    rho: np.ndarray   # distance from the centre, in [0, sqrt(2)]
    phi: np.ndarray   # angle, atan2 convention, in (-pi, pi]


def _axes(cfg: PatternConfig):
    xs = np.arange(cfg.width, dtype=np.float64)
    ys = np.arange(cfg.height, dtype=np.float64)
    xbar = (2.0 * xs - (cfg.width - 1)) / (cfg.width - 1)
    ybar = (2.0 * ys - (cfg.height - 1)) / (cfg.height - 1)
    return np.meshgrid(xbar, ybar)


def polar_coords(cfg: PatternConfig) -> PolarField:
    """Polar coordinates of every pixel about the image centre."""
    xbar, ybar = _axes(cfg)
    rho = np.sqrt(xbar * xbar + ybar * ybar)
    phi = np.arctan2(ybar, xbar)
    return PolarField(rho=rho, phi=phi)


def make_semantic(cfg: PatternConfig) -> np.ndarray:
    """Semantic watermark: a blank (all-zero) canvas."""
    return np.zeros((cfg.height, cfg.width), dtype=np.float64)


def make_photometric(cfg: PatternConfig) -> np.ndarray:
    """Photometric watermark: full HLS colour wheel, white centre, dark rim."""
    field = polar_coords(cfg)
    h = ((field.phi + cfg.delta_phi) / (2.0 * np.pi)) % 1.0
    l = 1.0 - field.rho / SQRT2
    s = np.ones_like(h)
    return hls_to_rgb(np.stack([h, l, s], axis=-1))


def make_geometric(cfg: PatternConfig) -> np.ndarray:
    """Geometric watermark: radially chirped sine interference field."""
    xbar, ybar = _axes(cfg)
    rho = np.sqrt(xbar * xbar + ybar * ybar)
    xi = cfg.xi_min + (cfg.xi_max - cfg.xi_min) * rho / SQRT2
    omega = 2.0 * np.pi * xi
    psi = np.sin(omega * xbar) * np.sin(omega * ybar)
    return (1.0 + psi) / 2.0


def make_reference_patterns(cfg: PatternConfig):
    """All three reference watermarks as (semantic, photometric, geometric)."""
    return make_semantic(cfg), make_photometric(cfg), make_geometric(cfg)


def reference_bundle(cfg: PatternConfig) -> WatermarkBundle:
    """The three reference watermarks packaged as a bundle."""
    sem, pho, geo = make_reference_patterns(cfg)
    return WatermarkBundle(sem=sem, pho=pho, geo=geo, provenance="reference")
