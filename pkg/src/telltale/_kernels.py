"""Hot numeric kernels: bilinear warps, gather plans, photometric ops, losses.

Every kernel has two implementations with identical semantics: a numba-jitted
one (default) and a pure-numpy fallback, selected at import time. Set
``TELLTALE_NO_NUMBA=1`` to force the fallback. The jitted kernels release the
GIL so permutation search can run on threads.

Weight convention for bilinear sampling (matching the four-corner definition):
``out = w00*img[v0,u0] + w10*img[v0,u0+1] + w01*img[v1,u0] + w11*img[v1,u1]``
with ``w00=(1-fu)(1-fv)``, ``w10=fu(1-fv)``, ``w01=(1-fu)fv``, ``w11=fu*fv``;
corners outside the image contribute zero. Plan application performs the
same arithmetic in the same order, so plans and direct warps agree bitwise.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("TELLTALE_NO_NUMBA", "") not in ("", "0")


# ---------------------------------------------------------------------------
# Pure-numpy fallbacks
# ---------------------------------------------------------------------------

def _coords(m6, h, w):
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    u = m6[0] * xs + m6[1] * ys + m6[2]
    v = m6[3] * xs + m6[4] * ys + m6[5]
    return u, v


def _warp_into_np(img, m6, out):
    h, w = img.shape[:2]
    u, v = _coords(np.asarray(m6, dtype=np.float64), h, w)
    u0f = np.floor(u)
    v0f = np.floor(v)
    fu = u - u0f
    fv = v - v0f
    u0 = u0f.astype(np.int64)
    v0 = v0f.astype(np.int64)
    weights = ((1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv)
    offsets = ((0, 0), (1, 0), (0, 1), (1, 1))
    flat = img.reshape(h * w) if img.ndim == 2 else img.reshape(h * w, img.shape[2])
    acc = np.zeros(img.shape, dtype=np.float64)
    for (du, dv), wk in zip(offsets, weights):
        uc = u0 + du
        vc = v0 + dv
        valid = (uc >= 0) & (uc < w) & (vc >= 0) & (vc < h)
        lin = np.where(valid, vc * w + uc, 0)
        samp = flat[lin.ravel()].reshape(img.shape)
        wmask = np.where(valid, wk, 0.0)
        if img.ndim == 3:
            wmask = wmask[..., None]
        acc += wmask * samp
    out[...] = acc
    return out


def _build_plan_np(m6, h, w, idx, wgt):
    u, v = _coords(m6, h, w)
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)
    weights = ((1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv)
    offsets = ((0, 0), (1, 0), (0, 1), (1, 1))
    for k, ((du, dv), wk) in enumerate(zip(offsets, weights)):
        uc = u0 + du
        vc = v0 + dv
        valid = (uc >= 0) & (uc < w) & (vc >= 0) & (vc < h)
        idx[:, k] = np.where(valid, vc * w + uc, 0).ravel()
        wgt[:, k] = np.where(valid, wk, 0.0).ravel().astype(wgt.dtype)
    return idx, wgt


def _plan_apply_into_np(flat_img, idx, wgt, out_flat):
    g = flat_img[idx]  # (N, 4) or (N, 4, C)
    if flat_img.ndim == 1:
        out_flat[...] = (wgt[:, 0] * g[:, 0] + wgt[:, 1] * g[:, 1]
                         + wgt[:, 2] * g[:, 2] + wgt[:, 3] * g[:, 3])
    else:
        out_flat[...] = (wgt[:, 0, None] * g[:, 0] + wgt[:, 1, None] * g[:, 1]
                         + wgt[:, 2, None] * g[:, 2] + wgt[:, 3, None] * g[:, 3])
    return out_flat


def _brightness_into_np(img, v, out):
    np.clip(v * img, 0.0, 1.0, out=out)
    return out


_LUMA = (0.299, 0.587, 0.114)


def _contrast_into_np(img, v, out):
    lum = _LUMA[0] * img[..., 0] + _LUMA[1] * img[..., 1] + _LUMA[2] * img[..., 2]
    mu = lum.mean()
    np.clip(v * img + (1.0 - v) * mu, 0.0, 1.0, out=out)
    return out


def _saturation_into_np(img, v, out):
    lum = _LUMA[0] * img[..., 0] + _LUMA[1] * img[..., 1] + _LUMA[2] * img[..., 2]
    np.clip(v * img + (1.0 - v) * lum[..., None], 0.0, 1.0, out=out)
    return out


def _hue_shift_into_np(img, shift, out):
    # Vectorized HSV round-trip with the hue channel shifted modulo 1.
    from . import imagecore

    hsv = imagecore.rgb_to_hsv(np.clip(img, 0.0, 1.0))
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    out[...] = np.clip(imagecore.hsv_to_rgb(hsv), 0.0, 1.0).astype(out.dtype)
    return out


def _mean_abs_np(a, b):
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if not _FORCE_NUMPY:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but be safe
        _FORCE_NUMPY = True

if not _FORCE_NUMPY:

    @njit(cache=True, nogil=True)
    def _warp2_nb(img, m6, out):
        h, w = img.shape
        m00, m01, m02, m10, m11, m12 = m6[0], m6[1], m6[2], m6[3], m6[4], m6[5]
        for y in range(h):
            u = m01 * y + m02
            v = m11 * y + m12
            for x in range(w):
                u0 = int(np.floor(u))
                v0 = int(np.floor(v))
                fu = u - u0
                fv = v - v0
                if 0 <= u0 and u0 + 1 < w and 0 <= v0 and v0 + 1 < h:
                    w00 = (1.0 - fu) * (1.0 - fv)
                    w10 = fu * (1.0 - fv)
                    w01 = (1.0 - fu) * fv
                    w11 = fu * fv
                    out[y, x] = (w00 * img[v0, u0] + w10 * img[v0, u0 + 1]
                                 + w01 * img[v0 + 1, u0] + w11 * img[v0 + 1, u0 + 1])
                else:
                    w00 = (1.0 - fu) * (1.0 - fv) if (0 <= u0 < w and 0 <= v0 < h) else 0.0
                    w10 = fu * (1.0 - fv) if (0 <= u0 + 1 < w and 0 <= v0 < h) else 0.0
                    w01 = (1.0 - fu) * fv if (0 <= u0 < w and 0 <= v0 + 1 < h) else 0.0
                    w11 = fu * fv if (0 <= u0 + 1 < w and 0 <= v0 + 1 < h) else 0.0
                    u0c = min(max(u0, 0), w - 1)
                    u1c = min(max(u0 + 1, 0), w - 1)
                    v0c = min(max(v0, 0), h - 1)
                    v1c = min(max(v0 + 1, 0), h - 1)
                    out[y, x] = (w00 * img[v0c, u0c] + w10 * img[v0c, u1c]
                                 + w01 * img[v1c, u0c] + w11 * img[v1c, u1c])
                u += m00
                v += m10
        return out

    @njit(cache=True, nogil=True)
    def _warp3_nb(img, m6, out):
        h, w, c = img.shape
        m00, m01, m02, m10, m11, m12 = m6[0], m6[1], m6[2], m6[3], m6[4], m6[5]
        for y in range(h):
            u = m01 * y + m02
            v = m11 * y + m12
            for x in range(w):
                u0 = int(np.floor(u))
                v0 = int(np.floor(v))
                fu = u - u0
                fv = v - v0
                if 0 <= u0 and u0 + 1 < w and 0 <= v0 and v0 + 1 < h:
                    w00 = (1.0 - fu) * (1.0 - fv)
                    w10 = fu * (1.0 - fv)
                    w01 = (1.0 - fu) * fv
                    w11 = fu * fv
                    u0c, u1c, v0c, v1c = u0, u0 + 1, v0, v0 + 1
                else:
                    w00 = (1.0 - fu) * (1.0 - fv) if (0 <= u0 < w and 0 <= v0 < h) else 0.0
                    w10 = fu * (1.0 - fv) if (0 <= u0 + 1 < w and 0 <= v0 < h) else 0.0
                    w01 = (1.0 - fu) * fv if (0 <= u0 < w and 0 <= v0 + 1 < h) else 0.0
                    w11 = fu * fv if (0 <= u0 + 1 < w and 0 <= v0 + 1 < h) else 0.0
                    u0c = min(max(u0, 0), w - 1)
                    u1c = min(max(u0 + 1, 0), w - 1)
                    v0c = min(max(v0, 0), h - 1)
                    v1c = min(max(v0 + 1, 0), h - 1)
                for k in range(c):
                    out[y, x, k] = (w00 * img[v0c, u0c, k] + w10 * img[v0c, u1c, k]
                                    + w01 * img[v1c, u0c, k] + w11 * img[v1c, u1c, k])
                u += m00
                v += m10
        return out

    @njit(cache=True, nogil=True)
    def _build_plan_nb(m6, h, w, idx, wgt):
        m00, m01, m02, m10, m11, m12 = m6[0], m6[1], m6[2], m6[3], m6[4], m6[5]
        i = 0
        for y in range(h):
            u = m01 * y + m02
            v = m11 * y + m12
            for x in range(w):
                u0 = int(np.floor(u))
                v0 = int(np.floor(v))
                fu = u - u0
                fv = v - v0
                w00 = (1.0 - fu) * (1.0 - fv) if (0 <= u0 < w and 0 <= v0 < h) else 0.0
                w10 = fu * (1.0 - fv) if (0 <= u0 + 1 < w and 0 <= v0 < h) else 0.0
                w01 = (1.0 - fu) * fv if (0 <= u0 < w and 0 <= v0 + 1 < h) else 0.0
                w11 = fu * fv if (0 <= u0 + 1 < w and 0 <= v0 + 1 < h) else 0.0
                u0c = min(max(u0, 0), w - 1)
                u1c = min(max(u0 + 1, 0), w - 1)
                v0c = min(max(v0, 0), h - 1)
                v1c = min(max(v0 + 1, 0), h - 1)
                idx[i, 0] = v0c * w + u0c
                idx[i, 1] = v0c * w + u1c
                idx[i, 2] = v1c * w + u0c
                idx[i, 3] = v1c * w + u1c
                wgt[i, 0] = w00
                wgt[i, 1] = w10
                wgt[i, 2] = w01
                wgt[i, 3] = w11
                u += m00
                v += m10
                i += 1
        return idx, wgt

    @njit(cache=True, nogil=True)
    def _plan_apply1_nb(flat_img, idx, wgt, out_flat):
        n = idx.shape[0]
        for i in range(n):
            out_flat[i] = (wgt[i, 0] * flat_img[idx[i, 0]] + wgt[i, 1] * flat_img[idx[i, 1]]
                           + wgt[i, 2] * flat_img[idx[i, 2]] + wgt[i, 3] * flat_img[idx[i, 3]])
        return out_flat

    @njit(cache=True, nogil=True)
    def _plan_apply3_nb(flat_img, idx, wgt, out_flat):
        n = idx.shape[0]
        c = flat_img.shape[1]
        for i in range(n):
            i0, i1, i2, i3 = idx[i, 0], idx[i, 1], idx[i, 2], idx[i, 3]
            w0, w1, w2, w3 = wgt[i, 0], wgt[i, 1], wgt[i, 2], wgt[i, 3]
            for k in range(c):
                out_flat[i, k] = (w0 * flat_img[i0, k] + w1 * flat_img[i1, k]
                                  + w2 * flat_img[i2, k] + w3 * flat_img[i3, k])
        return out_flat

    @njit(cache=True, nogil=True)
    def _brightness_nb(img, v, out):
        h, w, c = img.shape
        for y in range(h):
            for x in range(w):
                for k in range(c):
                    out[y, x, k] = min(1.0, max(0.0, v * img[y, x, k]))
        return out

    @njit(cache=True, nogil=True)
    def _contrast_nb(img, v, out):
        h, w, _ = img.shape
        acc = 0.0
        for y in range(h):
            for x in range(w):
                acc += (0.299 * img[y, x, 0] + 0.587 * img[y, x, 1]
                        + 0.114 * img[y, x, 2])
        mu = acc / (h * w)
        add = (1.0 - v) * mu
        for y in range(h):
            for x in range(w):
                for k in range(3):
                    out[y, x, k] = min(1.0, max(0.0, v * img[y, x, k] + add))
        return out

    @njit(cache=True, nogil=True)
    def _saturation_nb(img, v, out):
        h, w, _ = img.shape
        iv = 1.0 - v
        for y in range(h):
            for x in range(w):
                lum = (0.299 * img[y, x, 0] + 0.587 * img[y, x, 1]
                       + 0.114 * img[y, x, 2])
                for k in range(3):
                    out[y, x, k] = min(1.0, max(0.0, v * img[y, x, k] + iv * lum))
        return out

    @njit(cache=True, nogil=True)
    def _hue_shift_nb(img, shift, out):
        h, w, _ = img.shape
        for y in range(h):
            for x in range(w):
                r = min(1.0, max(0.0, img[y, x, 0]))
                g = min(1.0, max(0.0, img[y, x, 1]))
                b = min(1.0, max(0.0, img[y, x, 2]))
                mx = max(r, max(g, b))
                mn = min(r, min(g, b))
                d = mx - mn
                if d <= 0.0:
                    hh = 0.0
                elif mx == r:
                    q = (g - b) / d
                    if q < 0.0:
                        q += 6.0
                    hh = q * (1.0 / 6.0)
                elif mx == g:
                    hh = ((b - r) / d + 2.0) * (1.0 / 6.0)
                else:
                    hh = ((r - g) / d + 4.0) * (1.0 / 6.0)
                hh += shift
                if hh >= 1.0:
                    hh -= 1.0
                if hh < 0.0:
                    hh += 1.0
                s = 0.0 if mx <= 0.0 else d / mx
                h6 = hh * 6.0
                i = int(h6)
                if i > 5:
                    i = 5
                f = h6 - i
                p = mx * (1.0 - s)
                q2 = mx * (1.0 - f * s)
                t = mx * (1.0 - (1.0 - f) * s)
                if i == 0:
                    rr, gg, bb = mx, t, p
                elif i == 1:
                    rr, gg, bb = q2, mx, p
                elif i == 2:
                    rr, gg, bb = p, mx, t
                elif i == 3:
                    rr, gg, bb = p, q2, mx
                elif i == 4:
                    rr, gg, bb = t, p, mx
                else:
                    rr, gg, bb = mx, p, q2
                out[y, x, 0] = min(1.0, max(0.0, rr))
                out[y, x, 1] = min(1.0, max(0.0, gg))
                out[y, x, 2] = min(1.0, max(0.0, bb))
        return out

    @njit(cache=True, nogil=True)
    def _mean_abs_nb(a, b):
        af = a.ravel()
        bf = b.ravel()
        acc = 0.0
        for i in range(af.size):
            acc += abs(af[i] - bf[i])
        return acc / af.size


# ---------------------------------------------------------------------------
# Public dispatchers
# ---------------------------------------------------------------------------

def backend_name() -> str:
    return "numpy" if _FORCE_NUMPY else "numba"


def warp_into(img: np.ndarray, m6: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Bilinear-warp ``img`` by the inverse map ``m6`` (row-major 2x3) into ``out``."""
    if _FORCE_NUMPY:
        return _warp_into_np(img, m6, out)
    if img.ndim == 2:
        return _warp2_nb(img, m6, out)
    return _warp3_nb(img, m6, out)


def build_plan(m6: np.ndarray, h: int, w: int):
    """Precompute gather indices/weights for a fixed warp matrix.

    Weights stay float64 so plan application matches warp_into bitwise for
    both float32 and float64 images.
    """
    idx = np.empty((h * w, 4), dtype=np.int64)
    wgt = np.empty((h * w, 4), dtype=np.float64)
    if _FORCE_NUMPY:
        return _build_plan_np(np.asarray(m6, dtype=np.float64), h, w, idx, wgt)
    return _build_plan_nb(np.asarray(m6, dtype=np.float64), h, w, idx, wgt)


def plan_apply_into(flat_img, idx, wgt, out_flat):
    """Apply a precomputed warp plan; same arithmetic as warp_into."""
    if _FORCE_NUMPY:
        return _plan_apply_into_np(flat_img, idx, wgt, out_flat)
    if flat_img.ndim == 1:
        return _plan_apply1_nb(flat_img, idx, wgt, out_flat)
    return _plan_apply3_nb(flat_img, idx, wgt, out_flat)


def brightness_into(img, v, out):
    if _FORCE_NUMPY:
        return _brightness_into_np(img, v, out)
    return _brightness_nb(img, v, out)


def contrast_into(img, v, out):
    if _FORCE_NUMPY:
        return _contrast_into_np(img, v, out)
    return _contrast_nb(img, v, out)


def saturation_into(img, v, out):
    if _FORCE_NUMPY:
        return _saturation_into_np(img, v, out)
    return _saturation_nb(img, v, out)


def hue_shift_into(img, shift, out):
    if _FORCE_NUMPY:
        return _hue_shift_into_np(img, shift, out)
    return _hue_shift_nb(img, shift, out)


def mean_abs(a, b) -> float:
    if _FORCE_NUMPY:
        return _mean_abs_np(a, b)
    return float(_mean_abs_nb(a, b))
