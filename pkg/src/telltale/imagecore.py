"""Image representation, colour-space conversions, and bit-exact file I/O.

Images are plain numpy arrays: ``(H, W)`` or ``(H, W, 1)`` for single-channel,
``(H, W, 3)`` for colour, row-major, channel-last, float values in [0, 1]
unless a buffer is explicitly an unclamped optimization intermediate.
Coordinates are 0-based with ``(x, y) = (column, row)``.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image as _PILImage

TTWM_MAGIC = b"TTWM"
TTWM_VERSION = 1

_HEADER = struct.Struct("<4sBIII")


class FormatError(ValueError):
    """Raised for malformed TTWM payloads, bad PNGs, or schema violations."""


def as_image(arr, channels=None) -> np.ndarray:
    """Validate an array as an image; returns a float array, shape preserved."""
    img = np.asarray(arr)
    if img.ndim == 2:
        c = 1
    elif img.ndim == 3 and img.shape[2] in (1, 3):
        c = img.shape[2]
    else:
        raise FormatError(f"expected HxW or HxWx{{1,3}} image, got shape {img.shape}")
    if channels is not None and c != channels:
        raise FormatError(f"expected {channels}-channel image, got {c}")
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float64)
    if not np.isfinite(img).all():
        raise FormatError("image contains non-finite values")
    return img


def clamp01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Colour-space conversions (vectorized over the trailing channel axis).
# ---------------------------------------------------------------------------

def rgb_to_hls(rgb) -> np.ndarray:
    """RGB -> HLS, components in [0,1], hue as a fraction of a full cycle."""
    rgb = clamp01(np.asarray(rgb, dtype=np.float64))
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    l = (minc + maxc) / 2.0
    delta = maxc - minc
    chromatic = delta > 0.0
    safe = np.where(chromatic, delta, 1.0)

    denom = np.where(l <= 0.5, maxc + minc, 2.0 - maxc - minc)
    s = np.where(chromatic, delta / np.where(denom > 0.0, denom, 1.0), 0.0)

    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc,
                 np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(chromatic, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, l, s], axis=-1)


def _hls_channel(m1, m2, hue):
    hue = hue % 1.0
    out = np.where(hue < 1.0 / 6.0, m1 + (m2 - m1) * hue * 6.0, m2)
    out = np.where(hue >= 0.5, m1 + (m2 - m1) * (2.0 / 3.0 - hue) * 6.0, out)
    out = np.where(hue >= 2.0 / 3.0, m1, out)
    return out


def hls_to_rgb(hls) -> np.ndarray:
    """HLS -> RGB on the unit cube."""
    hls = np.asarray(hls, dtype=np.float64)
    h, l, s = hls[..., 0], np.clip(hls[..., 1], 0, 1), np.clip(hls[..., 2], 0, 1)
    m2 = np.where(l <= 0.5, l * (1.0 + s), l + s - l * s)
    m1 = 2.0 * l - m2
    r = _hls_channel(m1, m2, h + 1.0 / 3.0)
    g = _hls_channel(m1, m2, h)
    b = _hls_channel(m1, m2, h - 1.0 / 3.0)
    achromatic = s == 0.0
    rgb = np.stack([r, g, b], axis=-1)
    if np.any(achromatic):
        rgb = np.where(achromatic[..., None], l[..., None], rgb)
    return clamp01(rgb)


def rgb_to_hsv(rgb) -> np.ndarray:
    """RGB -> HSV, components in [0,1]."""
    rgb = clamp01(np.asarray(rgb, dtype=np.float64))
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    delta = maxc - minc
    chromatic = delta > 0.0
    safe = np.where(chromatic, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc,
                 np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(chromatic, (h / 6.0) % 1.0, 0.0)
    s = np.where(maxc > 0.0, delta / np.where(maxc > 0.0, maxc, 1.0), 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv) -> np.ndarray:
    """HSV -> RGB on the unit cube."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h = hsv[..., 0] % 1.0
    s = np.clip(hsv[..., 1], 0, 1)
    v = np.clip(hsv[..., 2], 0, 1)
    h6 = h * 6.0
    i = np.minimum(h6.astype(np.int64), 5)
    f = h6 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luminance(img) -> np.ndarray:
    """Per-pixel weighted luminance (0.299, 0.587, 0.114) of a 3-channel image."""
    img = as_image(img, channels=3)
    return img @ LUMA_WEIGHTS.astype(img.dtype)


# ---------------------------------------------------------------------------
# TTWM binary format: magic "TTWM", version 0x01, H/W/C uint32 LE, then
# H*W*C float32 LE values, row-major, channel-last. Bit-exact round-trip.
# ---------------------------------------------------------------------------

def write_ttwm(img, path) -> None:
    """Write an image as a TTWM file; data is stored as binary32."""
    img = as_image(img)
    h, w = img.shape[:2]
    c = 1 if img.ndim == 2 else img.shape[2]
    data = np.ascontiguousarray(img, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(TTWM_MAGIC, TTWM_VERSION, h, w, c))
        f.write(data.tobytes())


def read_ttwm(path) -> np.ndarray:
    """Read a TTWM file back as a float32 array ((H,W) or (H,W,3))."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated TTWM header")
    magic, version, h, w, c = _HEADER.unpack_from(raw)
    if magic != TTWM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != TTWM_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if c not in (1, 3):
        raise FormatError(f"{path}: channels must be 1 or 3, got {c}")
    expected = _HEADER.size + h * w * c * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).copy()
    if c == 1:
        return data.reshape(h, w)
    return data.reshape(h, w, c)


def write_png(img, path) -> None:
    """Write an image as 8-bit PNG (values quantized to round(255*x)/255)."""
    img = clamp01(as_image(img))
    quant = np.round(img * 255.0).astype(np.uint8)
    if quant.ndim == 3 and quant.shape[2] == 1:
        quant = quant[:, :, 0]
    mode = "L" if quant.ndim == 2 else "RGB"
    _PILImage.fromarray(quant, mode=mode).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Read a PNG into a float64 array in [0,1] (grayscale stays 1-channel)."""
    try:
        with _PILImage.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if im.mode not in ("1", "I", "F") else "L")
            arr = np.asarray(im)
    except OSError as exc:
        raise FormatError(f"{path}: not a readable PNG ({exc})") from exc
    return arr.astype(np.float64) / 255.0
