"""Fidelity, synchronicity, and traceability metrics.

l1/mae are the mean absolute difference (one definition, two reporting
contexts), linf the maximum absolute difference, PSNR against a peak of 1
capped at 100 dB, SSIM with the canonical 11x11 sigma-1.5 Gaussian window,
and IoU over binary masks (both-empty counts as perfect agreement).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .imagecore import as_image


@dataclass
class MetricReport:
    l1: float | None = None
    linf: float | None = None
    psnr_db: float | None = None
    ssim: float | None = None
    mae: float | None = None
    iou: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def _pair(a, b):
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def l1(a, b) -> float:
    """Mean absolute difference."""
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def mae(a, b) -> float:
    """Mean absolute error — same definition as l1."""
    return l1(a, b)


def linf(a, b) -> float:
    """Maximum absolute difference."""
    a, b = _pair(a, b)
    return float(np.max(np.abs(a - b)))


PSNR_CAP_DB = 100.0


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range, capped at 100."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _gaussian_window() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) / 2.0
    coords = np.arange(_SSIM_WINDOW) - half
    g = np.exp(-(coords ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_single(a: np.ndarray, b: np.ndarray) -> float:
    if min(a.shape[:2]) < _SSIM_WINDOW:
        raise ValueError(f"SSIM needs images at least {_SSIM_WINDOW} pixels per side")
    win = _gaussian_window()
    mu_a = fftconvolve(a, win, mode="valid")
    mu_b = fftconvolve(b, win, mode="valid")
    mu_aa = fftconvolve(a * a, win, mode="valid")
    mu_bb = fftconvolve(b * b, win, mode="valid")
    mu_ab = fftconvolve(a * b, win, mode="valid")
    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b
    c1 = _SSIM_K1 ** 2  # dynamic range is 1
    c2 = _SSIM_K2 ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Single-scale SSIM over the valid window region, averaged over channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        return _ssim_single(a, b)
    return float(np.mean([_ssim_single(a[..., k], b[..., k]) for k in range(a.shape[2])]))


def iou(a_mask, b_mask) -> float:
    """Intersection over union of binary masks; both-empty is defined as 1."""
    a, b = _pair(a_mask, b_mask)
    a = a >= 0.5
    b = b >= 0.5
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)


_METRIC_FUNCS = {"l1": l1, "linf": linf, "psnr": psnr, "ssim": ssim,
                 "mae": mae, "iou": iou}


def compute_metrics(a, b, which=("l1", "linf", "psnr", "ssim", "iou")) -> MetricReport:
    """Evaluate a selection of metrics into a report."""
    report = MetricReport()
    for name in which:
        if name not in _METRIC_FUNCS:
            raise ValueError(f"unknown metric {name!r}; choose from {sorted(_METRIC_FUNCS)}")
        value = _METRIC_FUNCS[name](a, b)
        setattr(report, "psnr_db" if name == "psnr" else name, value)
    return report
