"""A differentiable twin of the transformation chain for training graphs.

Reimplements the toolkit's transformation math as torch operations on
channel-last float tensors: recentred inverse-affine bilinear warps where
out-of-bounds corners contribute zero, the brightness/contrast/saturation
lines with [0,1] clamping, the HSV hue rotation, masked compositing with the
self-referential surrogate fill, and ground-truth watermark propagation.

Chain parameters are constants of each training step, so the sampling grids
and corner weights are precomputed in float64 numpy; gradients flow through
the gathered pixel values only. Outputs match the toolkit's renderer to
float32 rounding (the asserted budget is 1e-4; the conventions are the same,
only the accumulation precision differs).
"""

from __future__ import annotations

import numpy as np
import torch

from .sampler import (DEFAULT_RANGES, GEO_MEMBERS, PHO_MEMBERS,
                      mask_from_spec)
from .tellio import FormatError

LUMA = (0.299, 0.587, 0.114)

_IDENTITY_GEO = {"ro": 0.0, "tr_x": 0.0, "tr_y": 0.0,
                 "sc": 1.0, "sh_x": 0.0, "sh_y": 0.0}


def _check_order(order, members) -> tuple:
    order = tuple(order)
    if sorted(order) != sorted(members):
        raise FormatError(f"order {order} is not a permutation of {members}")
    return order


def _as_timage(img: torch.Tensor, channels=None) -> torch.Tensor:
    if not isinstance(img, torch.Tensor):
        raise FormatError(f"expected a torch tensor, got {type(img).__name__}")
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise FormatError(f"images are (H,W) or (H,W,C) channel-last, got {tuple(img.shape)}")
    if channels == 3 and (img.ndim != 3 or img.shape[2] != 3):
        raise FormatError(f"expected a 3-channel image, got {tuple(img.shape)}")
    if channels == 1 and img.ndim != 2:
        raise FormatError(f"expected a 1-channel image, got {tuple(img.shape)}")
    return img


# ---------------------------------------------------------------------------
# Geometric: inverse affine matrices, recentring, bilinear warps
# ---------------------------------------------------------------------------

def inverse_affine(kind: str, params: dict, width: int, height: int) -> np.ndarray:
    """The inverse (output→source) affine matrix for one geometric step."""
    p = {**_IDENTITY_GEO, **params}
    if not p["sc"] > 1e-3:
        raise FormatError(f"scale must be > 1e-3, got {p['sc']}")
    if abs(p["sh_x"]) >= np.pi / 2 or abs(p["sh_y"]) >= np.pi / 2:
        raise FormatError(f"|shear| must be < pi/2, got ({p['sh_x']}, {p['sh_y']})")
    m = np.eye(3, dtype=np.float64)
    if kind == "ro":
        c, s = np.cos(p["ro"]), np.sin(p["ro"])
        m[0, 0], m[0, 1] = c, -s
        m[1, 0], m[1, 1] = s, c
    elif kind == "tr":
        m[0, 2] = -p["tr_x"] * width
        m[1, 2] = -p["tr_y"] * height
    elif kind == "sc":
        m[0, 0] = m[1, 1] = 1.0 / p["sc"]
    elif kind == "sh":
        m[0, 1] = np.tan(p["sh_x"])
        m[1, 0] = np.tan(p["sh_y"])
    else:
        raise FormatError(f"unknown geometric step {kind!r}")
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) <= 1e-9:
        raise FormatError(f"{kind} matrix is singular (det={det})")
    return m


def recenter(m: np.ndarray, width: int, height: int) -> np.ndarray:
    """Conjugate an origin-anchored matrix so it acts about the image centre."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    t_pos = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    t_neg = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    return t_pos @ m @ t_neg


def recentred_matrix(kind: str, params: dict, width: int, height: int) -> np.ndarray:
    return recenter(inverse_affine(kind, params, width, height), width, height)


def _gather_plan(m: np.ndarray, height: int, width: int):
    """Corner indices (N,4) and weights (N,4) of the bilinear gather for `m`."""
    m = np.asarray(m, dtype=np.float64)
    m6 = (np.array([m[0, 0], m[0, 1], m[0, 2], m[1, 0], m[1, 1], m[1, 2]])
          if m.shape == (3, 3) else m)
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    u = m6[0] * xs + m6[1] * ys + m6[2]
    v = m6[3] * xs + m6[4] * ys + m6[5]
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = u - u0
    fv = v - v0
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)
    weights = ((1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv)
    offsets = ((0, 0), (1, 0), (0, 1), (1, 1))
    idx = np.empty((height * width, 4), dtype=np.int64)
    wgt = np.empty((height * width, 4), dtype=np.float64)
    for k, ((du, dv), wk) in enumerate(zip(offsets, weights)):
        uc = u0 + du
        vc = v0 + dv
        valid = (uc >= 0) & (uc < width) & (vc >= 0) & (vc < height)
        idx[:, k] = np.where(valid, vc * width + uc, 0).ravel()
        wgt[:, k] = np.where(valid, wk, 0.0).ravel()
    return idx, wgt


def warp_bilinear(img: torch.Tensor, m: np.ndarray) -> torch.Tensor:
    """Bilinear warp by the inverse map `m`; out-of-bounds corners contribute 0."""
    img = _as_timage(img)
    h, w = img.shape[:2]
    idx_np, wgt_np = _gather_plan(m, h, w)
    idx = torch.from_numpy(idx_np).to(img.device)
    wgt = torch.from_numpy(wgt_np).to(device=img.device, dtype=img.dtype)
    if img.ndim == 2:
        g = img.reshape(h * w)[idx]                    # (N, 4)
        return (wgt * g).sum(dim=1).reshape(h, w)
    g = img.reshape(h * w, img.shape[2])[idx]          # (N, 4, C)
    return (wgt.unsqueeze(-1) * g).sum(dim=1).reshape(img.shape)


def apply_geometric(img: torch.Tensor, order, params: dict) -> torch.Tensor:
    """Apply the four warps sequentially in the given order."""
    order = _check_order(order, GEO_MEMBERS)
    img = _as_timage(img)
    h, w = img.shape[:2]
    for kind in order:
        img = warp_bilinear(img, recentred_matrix(kind, params, w, h))
    return img


# ---------------------------------------------------------------------------
# Photometric adjustments
# ---------------------------------------------------------------------------

def _luminance(img: torch.Tensor) -> torch.Tensor:
    weight = torch.tensor(LUMA, dtype=img.dtype, device=img.device)
    return img @ weight


def _rgb_to_hsv(rgb: torch.Tensor) -> torch.Tensor:
    rgb = rgb.clamp(0.0, 1.0)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(dim=-1).values
    minc = rgb.min(dim=-1).values
    delta = maxc - minc
    chromatic = delta > 0.0
    ones = torch.ones_like(delta)
    safe = torch.where(chromatic, delta, ones)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = torch.where(maxc == r, bc - gc,
                    torch.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = torch.where(chromatic, (h / 6.0) % 1.0, torch.zeros_like(h))
    positive = maxc > 0.0
    s = torch.where(positive, delta / torch.where(positive, maxc, ones),
                    torch.zeros_like(delta))
    return torch.stack([h, s, maxc], dim=-1)


def _hsv_to_rgb(hsv: torch.Tensor) -> torch.Tensor:
    h = hsv[..., 0] % 1.0
    s = hsv[..., 1].clamp(0.0, 1.0)
    v = hsv[..., 2].clamp(0.0, 1.0)
    h6 = h * 6.0
    i = h6.long().clamp(max=5)
    f = h6 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = torch.stack([v, q, p, p, t, v], dim=-1)
    g = torch.stack([t, v, v, q, p, p], dim=-1)
    b = torch.stack([p, p, t, v, v, q], dim=-1)
    sel = i.unsqueeze(-1)
    return torch.cat([r.gather(-1, sel), g.gather(-1, sel), b.gather(-1, sel)], dim=-1)


def adjust(img: torch.Tensor, kind: str, value: float) -> torch.Tensor:
    """One photometric operator; output clamped to [0,1].

    b: value·img. c: value·img + (1−value)·mean(luminance). h: per-pixel HSV
    hue += value (mod 1). s: value·img + (1−value)·luminance.
    """
    value = float(value)
    if kind == "b":
        img = _as_timage(img)
        if value < 0:
            raise FormatError(f"brightness must be >= 0, got {value}")
        return (value * img).clamp(0.0, 1.0)
    img = _as_timage(img, channels=3)
    if kind == "c":
        if value < 0:
            raise FormatError(f"contrast must be >= 0, got {value}")
        mu = _luminance(img).mean()
        return (value * img + (1.0 - value) * mu).clamp(0.0, 1.0)
    if kind == "s":
        if value < 0:
            raise FormatError(f"saturation must be >= 0, got {value}")
        lum = _luminance(img)
        return (value * img + (1.0 - value) * lum.unsqueeze(-1)).clamp(0.0, 1.0)
    if kind == "h":
        hsv = _rgb_to_hsv(img)
        h = (hsv[..., 0] + value) % 1.0
        return _hsv_to_rgb(torch.stack([h, hsv[..., 1], hsv[..., 2]],
                                       dim=-1)).clamp(0.0, 1.0)
    raise FormatError(f"unknown photometric step {kind!r}")


def apply_photometric(img: torch.Tensor, order, values: dict) -> torch.Tensor:
    """Apply the four adjustments sequentially in the given order."""
    order = _check_order(order, PHO_MEMBERS)
    values = {"b": 1.0, "c": 1.0, "h": 0.0, "s": 1.0, **values}
    for kind in order:
        img = adjust(img, kind, values[kind])
    return img


# ---------------------------------------------------------------------------
# Semantic edits
# ---------------------------------------------------------------------------

def surrogate_fill(img: torch.Tensor, seed: int) -> torch.Tensor:
    """Fill content built from the carrier itself: a random photometric plus
    geometric transform with parameters drawn from the standard boxes."""
    img = _as_timage(img)
    rng = np.random.default_rng(seed)
    pho = {name: float(rng.uniform(*DEFAULT_RANGES[name])) for name in PHO_MEMBERS}
    geo = {name: float(rng.uniform(*DEFAULT_RANGES[name]))
           for name in ("ro", "tr_x", "tr_y", "sc", "sh_x", "sh_y")}
    pho_order = tuple(PHO_MEMBERS[i] for i in rng.permutation(4))
    geo_order = tuple(GEO_MEMBERS[i] for i in rng.permutation(4))
    filled = img
    if img.ndim == 3:
        filled = apply_photometric(filled, pho_order, pho)
    return apply_geometric(filled, geo_order, geo)


def resolve_mask(sem_obj: dict, height: int, width: int) -> np.ndarray:
    """The concrete binary mask of a chain document's semantic block."""
    mask_obj = sem_obj.get("mask")
    if not isinstance(mask_obj, dict) or "seed" not in mask_obj:
        raise FormatError("the codec handles procedural masks only; the semantic "
                          "block must carry a mask spec with a 'seed'")
    return mask_from_spec(height, width, int(mask_obj["seed"]),
                          shape=mask_obj.get("shape"), frac=mask_obj.get("frac"))


def apply_semantic(img: torch.Tensor, sem_obj: dict) -> torch.Tensor:
    """Composite fill into the carrier under the binary mask: (1−m)·img + m·fill."""
    img = _as_timage(img)
    h, w = img.shape[:2]
    fill_kind = sem_obj.get("fill", "surrogate")
    if fill_kind != "surrogate":
        raise FormatError("the codec handles surrogate fills only; file-based "
                          f"fills ({fill_kind!r}) belong to the toolkit")
    mask = torch.from_numpy(resolve_mask(sem_obj, h, w)).to(
        device=img.device, dtype=img.dtype)
    fill = surrogate_fill(img, int(sem_obj.get("fill_seed", 0)))
    if img.ndim == 3:
        mask = mask.unsqueeze(-1)
    return (1.0 - mask) * img + mask * fill


# ---------------------------------------------------------------------------
# Chains and ground-truth propagation
# ---------------------------------------------------------------------------

def apply_chain(img: torch.Tensor, chain_obj: dict) -> torch.Tensor:
    """Apply a chain document in the fixed class order, skipping absent blocks."""
    img = _as_timage(img)
    if "semantic" in chain_obj:
        img = apply_semantic(img, chain_obj["semantic"])
    if "photometric" in chain_obj:
        block = chain_obj["photometric"]
        img = apply_photometric(img, block["order"], block.get("params", {}))
    if "geometric" in chain_obj:
        block = chain_obj["geometric"]
        img = apply_geometric(img, block["order"], block.get("params", {}))
    return img


def watermark_targets(refs: dict, chain_obj: dict) -> dict:
    """Ideally transformed watermarks for a chain document.

    The semantic target is the (geometrically warped) edit mask — the blank
    reference canvas reduces masked compositing to the mask itself. The
    photometric target passes through the photometric then geometric blocks;
    the geometric target through the geometric block only.
    """
    sem = _as_timage(refs["sem"], channels=1)
    pho = _as_timage(refs["pho"], channels=3)
    geo = _as_timage(refs["geo"], channels=1)
    h, w = sem.shape[:2]
    if "semantic" in chain_obj:
        sem = torch.from_numpy(resolve_mask(chain_obj["semantic"], h, w)).to(
            device=pho.device, dtype=pho.dtype)
    if "photometric" in chain_obj:
        block = chain_obj["photometric"]
        pho = apply_photometric(pho, block["order"], block.get("params", {}))
    if "geometric" in chain_obj:
        block = chain_obj["geometric"]
        params = block.get("params", {})
        sem = apply_geometric(sem, block["order"], params)
        pho = apply_geometric(pho, block["order"], params)
        geo = apply_geometric(geo, block["order"], params)
    return {"sem": sem, "pho": pho, "geo": geo}
