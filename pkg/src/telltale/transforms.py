"""The parameterized transformation engine.

Geometric warps (rotation, translation, scale, shear as recentred inverse
affine maps with bilinear resampling), photometric adjustments (brightness,
contrast, hue, saturation), semantic mask compositing, full chains in the
fixed class order semantic → photometric → geometric, and ground-truth
watermark propagation.

Geometric steps are applied sequentially — each step resamples and zero-fills
on its own. ``compose_geometric_matrix`` provides the single-matrix
alternative, which behaves differently at boundaries and interpolates once;
it is used for exact mask transport, not for chain semantics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .bundle import WatermarkBundle
from .imagecore import FormatError, as_image, clamp01, read_png, read_ttwm

GEO_MEMBERS = ("ro", "tr", "sc", "sh")
PHO_MEMBERS = ("b", "c", "h", "s")

# Experimental parameter boxes: rotation ±30°, translation ±0.2 of the image
# size, scale 0.8–1.2, shear ±15°, photometric factors 0.75–1.25, hue ±0.35
# of a full cycle.
GEO_BOXES = {
    "ro": (-np.pi / 6.0, np.pi / 6.0),
    "tr_x": (-0.2, 0.2),
    "tr_y": (-0.2, 0.2),
    "sc": (0.8, 1.2),
    "sh_x": (-np.pi / 12.0, np.pi / 12.0),
    "sh_y": (-np.pi / 12.0, np.pi / 12.0),
}
PHO_BOXES = {
    "b": (0.75, 1.25),
    "c": (0.75, 1.25),
    "h": (-0.35, 0.35),
    "s": (0.75, 1.25),
}


class ParameterError(ValueError):
    """Raised for out-of-domain transformation parameters."""


@dataclass(frozen=True)
class GeoParams:
    """Geometric parameters: angles in radians, translation as size fractions."""

    ro: float = 0.0
    tr_x: float = 0.0
    tr_y: float = 0.0
    sc: float = 1.0
    sh_x: float = 0.0
    sh_y: float = 0.0

    def validate(self):
        if not self.sc > 1e-3:
            raise ParameterError(f"scale must be > 1e-3, got {self.sc}")
        if abs(self.sh_x) >= np.pi / 2 or abs(self.sh_y) >= np.pi / 2:
            raise ParameterError(f"|shear| must be < pi/2, got ({self.sh_x}, {self.sh_y})")
        return self

    def as_dict(self):
        return {"ro": self.ro, "tr_x": self.tr_x, "tr_y": self.tr_y,
                "sc": self.sc, "sh_x": self.sh_x, "sh_y": self.sh_y}


@dataclass(frozen=True)
class PhoParams:
    """Photometric parameters: factors for b/c/s, hue shift as a cycle fraction."""

    b: float = 1.0
    c: float = 1.0
    h: float = 0.0
    s: float = 1.0

    def validate(self):
        if self.b < 0 or self.c < 0 or self.s < 0:
            raise ParameterError(
                f"brightness/contrast/saturation must be >= 0, got ({self.b}, {self.c}, {self.s})")
        return self

    def as_dict(self):
        return {"b": self.b, "c": self.c, "h": self.h, "s": self.s}


def validate_order(order, members) -> tuple:
    """Check that `order` is a permutation of the class members."""
    order = tuple(order)
    if sorted(order) != sorted(members):
        raise ParameterError(f"order {order} is not a permutation of {members}")
    return order


@dataclass(frozen=True)
class MaskSpec:
    """Procedural mask descriptor — regenerates the same mask at any size."""

    seed: int
    shape: str | None = None     # "rect" | "ellipse" | None (drawn from seed)
    frac: float | None = None    # target area fraction, None = drawn from seed


@dataclass
class SemanticEdit:
    """A masked edit: binary mask plus fill content (or a surrogate recipe)."""

    mask: np.ndarray | None = None        # (H, W) binary; None = materialize from spec
    fill: np.ndarray | None = None        # (H, W, 3); None = surrogate from the carrier
    mask_spec: MaskSpec | None = None
    fill_seed: int = 0

    def resolve_mask(self, height: int, width: int) -> np.ndarray:
        """The concrete binary mask at the requested size."""
        if self.mask is not None:
            if self.mask.shape != (height, width):
                raise ParameterError(
                    f"mask shape {self.mask.shape} does not match carrier {(height, width)}")
            return binarize_mask(self.mask)
        if self.mask_spec is None:
            raise ParameterError("semantic edit has neither a mask nor a mask spec")
        s = self.mask_spec
        return make_mask(height, width, s.seed, shape=s.shape, frac=s.frac)


@dataclass
class ChainSpec:
    """One transformation chain: fixed class order, optional blocks."""

    semantic: SemanticEdit | None = None
    photometric: tuple[tuple, PhoParams] | None = None   # (order, params)
    geometric: tuple[tuple, GeoParams] | None = None     # (order, params)

    def __post_init__(self):
        if self.photometric is not None:
            order, params = self.photometric
            self.photometric = (validate_order(order, PHO_MEMBERS), params.validate())
        if self.geometric is not None:
            order, params = self.geometric
            self.geometric = (validate_order(order, GEO_MEMBERS), params.validate())


# ---------------------------------------------------------------------------
# Geometric: inverse affine matrices, recentring, bilinear warps
# ---------------------------------------------------------------------------

def inverse_affine(kind: str, params: GeoParams, width: int, height: int) -> np.ndarray:
    """The inverse (output→source) affine matrix for one geometric step."""
    params.validate()
    m = np.eye(3, dtype=np.float64)
    if kind == "ro":
        c, s = np.cos(params.ro), np.sin(params.ro)
        m[0, 0], m[0, 1] = c, -s
        m[1, 0], m[1, 1] = s, c
    elif kind == "tr":
        m[0, 2] = -params.tr_x * width
        m[1, 2] = -params.tr_y * height
    elif kind == "sc":
        m[0, 0] = m[1, 1] = 1.0 / params.sc
    elif kind == "sh":
        m[0, 1] = np.tan(params.sh_x)
        m[1, 0] = np.tan(params.sh_y)
    else:
        raise ParameterError(f"unknown geometric step {kind!r}")
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) <= 1e-9:
        raise ParameterError(f"{kind} matrix is singular (det={det})")
    return m


def recenter(m: np.ndarray, width: int, height: int) -> np.ndarray:
    """Conjugate an origin-anchored matrix so it acts about the image centre."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    t_pos = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    t_neg = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    return t_pos @ m @ t_neg


def _as_m6(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape == (6,):
        return m
    if m.shape != (3, 3):
        raise ParameterError(f"expected a 3x3 affine matrix, got shape {m.shape}")
    if not np.allclose(m[2], (0.0, 0.0, 1.0)):
        raise ParameterError(f"last matrix row must be (0,0,1), got {m[2]}")
    if not np.all(np.isfinite(m)):
        raise ParameterError("matrix entries must be finite")
    return np.array([m[0, 0], m[0, 1], m[0, 2], m[1, 0], m[1, 1], m[1, 2]])


def warp_bilinear(img: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Bilinear warp by the inverse map `m`; out-of-bounds corners contribute 0."""
    img = as_image(img)
    out = np.empty_like(img)
    _kernels.warp_into(img, _as_m6(m), out)
    return out


def recentred_matrix(kind: str, params: GeoParams, width: int, height: int) -> np.ndarray:
    return recenter(inverse_affine(kind, params, width, height), width, height)


def apply_geometric(img: np.ndarray, order, params: GeoParams) -> np.ndarray:
    """Apply the four warps sequentially in the given order."""
    order = validate_order(order, GEO_MEMBERS)
    img = as_image(img)
    h, w = img.shape[:2]
    for kind in order:
        img = warp_bilinear(img, recentred_matrix(kind, params, w, h))
    return img


def compose_geometric_matrix(order, params: GeoParams, width: int, height: int) -> np.ndarray:
    """Single composed inverse map of the sequential steps (output→source).

    Sampling once through this matrix is NOT equivalent to the sequential
    pipeline at boundaries (each sequential step zero-fills and resamples);
    it is the exact coordinate map, used for nearest-neighbour mask transport.
    """
    order = validate_order(order, GEO_MEMBERS)
    m = np.eye(3)
    for kind in order:
        # img_k(p) = img_{k-1}(M_k p)  =>  source = M_1 · M_2 · … · M_n · p
        m = m @ recentred_matrix(kind, params, width, height)
    return m


def warp_mask_nearest(mask: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Transport a binary mask through an affine map by nearest-neighbour lookup."""
    mask = as_image(mask, channels=1)
    h, w = mask.shape[:2]
    m6 = _as_m6(m)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    u = np.rint(m6[0] * xs + m6[1] * ys + m6[2]).astype(np.int64)
    v = np.rint(m6[3] * xs + m6[4] * ys + m6[5]).astype(np.int64)
    valid = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    out = np.zeros_like(mask)
    flat = mask.reshape(h * w) if mask.ndim == 2 else mask.reshape(h * w, 1)
    lin = np.where(valid, v * w + u, 0)
    sampled = flat[lin.ravel()].reshape(mask.shape)
    out[valid] = sampled[valid]
    return out


# ---------------------------------------------------------------------------
# Photometric adjustments
# ---------------------------------------------------------------------------

def adjust(img: np.ndarray, kind: str, value: float) -> np.ndarray:
    """One photometric operator; output clamped to [0,1].

    b: value·img. c: value·img + (1−value)·mean(luminance). h: per-pixel HSV
    hue += value (mod 1). s: value·img + (1−value)·luminance.
    """
    if kind == "b":
        img = as_image(img)
        if value < 0:
            raise ParameterError(f"brightness must be >= 0, got {value}")
        if img.ndim == 2:
            return clamp01(value * img)
        return _kernels.brightness_into(img, float(value), np.empty_like(img))
    img = as_image(img, channels=3)
    out = np.empty_like(img)
    if kind == "c":
        if value < 0:
            raise ParameterError(f"contrast must be >= 0, got {value}")
        return _kernels.contrast_into(img, float(value), out)
    if kind == "s":
        if value < 0:
            raise ParameterError(f"saturation must be >= 0, got {value}")
        return _kernels.saturation_into(img, float(value), out)
    if kind == "h":
        return _kernels.hue_shift_into(img, float(value), out)
    raise ParameterError(f"unknown photometric step {kind!r}")


def apply_photometric(img: np.ndarray, order, params: PhoParams) -> np.ndarray:
    """Apply the four adjustments sequentially in the given order."""
    order = validate_order(order, PHO_MEMBERS)
    params.validate()
    values = params.as_dict()
    for kind in order:
        img = adjust(img, kind, values[kind])
    return img


# ---------------------------------------------------------------------------
# Semantic edits
# ---------------------------------------------------------------------------

def binarize_mask(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a grey mask to strict {0,1}."""
    mask = as_image(mask, channels=1)
    return (mask >= threshold).astype(np.float64)


def make_mask(height: int, width: int, seed: int, shape: str | None = None,
              frac: float | None = None) -> np.ndarray:
    """One axis-aligned rectangle or ellipse mask covering ~5–30% of the area."""
    rng = np.random.default_rng(seed)
    drawn_shape = ("rect", "ellipse")[int(rng.integers(0, 2))]
    drawn_frac = float(rng.uniform(0.05, 0.30))
    gamma = float(rng.uniform(0.8, 1.25))  # aspect skew, keeps extents inside
    if shape is None:
        shape = drawn_shape
    if frac is None:
        frac = drawn_frac
    if shape not in ("rect", "ellipse"):
        raise ParameterError(f"mask shape must be rect or ellipse, got {shape!r}")
    if not 0.0 < frac <= 0.5:
        raise ParameterError(f"mask area fraction must be in (0, 0.5], got {frac}")

    area_scale = 1.0 if shape == "rect" else 4.0 / np.pi
    rw = width * np.sqrt(frac * area_scale) * gamma
    rh = height * np.sqrt(frac * area_scale) / gamma
    rw = min(max(2.0, rw), float(width))
    rh = min(max(2.0, rh), float(height))
    x0 = float(rng.uniform(0.0, width - rw))
    y0 = float(rng.uniform(0.0, height - rh))

    mask = np.zeros((height, width), dtype=np.float64)
    if shape == "rect":
        mask[int(round(y0)):int(round(y0 + rh)), int(round(x0)):int(round(x0 + rw))] = 1.0
    else:
        cy, cx = y0 + rh / 2.0, x0 + rw / 2.0
        ys, xs = np.meshgrid(np.arange(height, dtype=np.float64),
                             np.arange(width, dtype=np.float64), indexing="ij")
        inside = ((xs - cx) / (rw / 2.0)) ** 2 + ((ys - cy) / (rh / 2.0)) ** 2 <= 1.0
        mask[inside] = 1.0
    return mask


def random_mask(height: int, width: int, seed: int) -> np.ndarray:
    """Random rectangle-or-ellipse mask; shape and coverage drawn from the seed."""
    return make_mask(height, width, seed)


def surrogate_fill(img: np.ndarray, seed: int) -> np.ndarray:
    """Fill content built from the carrier itself: a random photometric plus
    geometric transform with parameters drawn from the standard boxes."""
    img = as_image(img)
    rng = np.random.default_rng(seed)
    pho = PhoParams(b=float(rng.uniform(*PHO_BOXES["b"])),
                    c=float(rng.uniform(*PHO_BOXES["c"])),
                    h=float(rng.uniform(*PHO_BOXES["h"])),
                    s=float(rng.uniform(*PHO_BOXES["s"])))
    geo = GeoParams(ro=float(rng.uniform(*GEO_BOXES["ro"])),
                    tr_x=float(rng.uniform(*GEO_BOXES["tr_x"])),
                    tr_y=float(rng.uniform(*GEO_BOXES["tr_y"])),
                    sc=float(rng.uniform(*GEO_BOXES["sc"])),
                    sh_x=float(rng.uniform(*GEO_BOXES["sh_x"])),
                    sh_y=float(rng.uniform(*GEO_BOXES["sh_y"])))
    pho_order = tuple(PHO_MEMBERS[i] for i in rng.permutation(4))
    geo_order = tuple(GEO_MEMBERS[i] for i in rng.permutation(4))
    filled = img
    if img.ndim == 3:
        filled = apply_photometric(filled, pho_order, pho)
    return apply_geometric(filled, geo_order, geo)


def apply_semantic(img: np.ndarray, edit: SemanticEdit) -> np.ndarray:
    """Composite fill into the carrier under the binary mask: (1−m)·img + m·fill."""
    img = as_image(img)
    h, w = img.shape[:2]
    mask = edit.resolve_mask(h, w)
    if edit.fill is not None:
        fill = as_image(edit.fill)
        if fill.shape[:2] != (h, w):
            raise ParameterError(
                f"fill shape {fill.shape[:2]} does not match carrier {(h, w)}")
    else:
        fill = surrogate_fill(img, edit.fill_seed)
    if img.ndim == 3:
        mask = mask[..., None]
        if fill.ndim == 2:
            fill = fill[..., None]
    return (1.0 - mask) * img + mask * fill


# ---------------------------------------------------------------------------
# Chains and ground-truth propagation
# ---------------------------------------------------------------------------

def apply_chain(img: np.ndarray, chain: ChainSpec) -> np.ndarray:
    """Apply a chain in the fixed class order, skipping absent blocks."""
    img = as_image(img)
    if chain.semantic is not None:
        img = apply_semantic(img, chain.semantic)
    if chain.photometric is not None:
        order, params = chain.photometric
        img = apply_photometric(img, order, params)
    if chain.geometric is not None:
        order, params = chain.geometric
        img = apply_geometric(img, order, params)
    return img


def ground_truth_watermarks(refs: WatermarkBundle, chain: ChainSpec) -> WatermarkBundle:
    """Ideally transformed watermarks for a chain.

    The semantic ground truth is the (geometrically warped) edit mask — the
    blank reference canvas reduces masked compositing to the mask itself. The
    photometric ground truth passes through the photometric then geometric
    blocks; the geometric ground truth through the geometric block only.
    """
    h, w = refs.height, refs.width
    sem = chain.semantic.resolve_mask(h, w) if chain.semantic is not None else as_image(refs.sem)
    pho = as_image(refs.pho, channels=3)
    geo = as_image(refs.geo)

    if chain.photometric is not None:
        order, params = chain.photometric
        pho = apply_photometric(pho, order, params)
    if chain.geometric is not None:
        order, params = chain.geometric
        sem = apply_geometric(sem, order, params)
        pho = apply_geometric(pho, order, params)
        geo = apply_geometric(geo, order, params)
    return WatermarkBundle(sem=sem, pho=pho, geo=geo, provenance="ground_truth")


# ---------------------------------------------------------------------------
# ChainSpec JSON (the interchange format shared with other tooling)
# ---------------------------------------------------------------------------

def chain_to_json(chain: ChainSpec) -> dict:
    """Serialize a chain to the interchange schema (angles in radians)."""
    obj: dict = {}
    if chain.semantic is not None:
        edit = chain.semantic
        if edit.mask_spec is not None:
            mask_obj = {"shape": edit.mask_spec.shape, "seed": edit.mask_spec.seed,
                        "frac": edit.mask_spec.frac}
        else:
            raise FormatError("only procedural masks (mask_spec) can be serialized; "
                              "write image masks to files and reference their path")
        obj["semantic"] = {"mask": mask_obj, "fill": "surrogate",
                           "fill_seed": edit.fill_seed}
    if chain.photometric is not None:
        order, params = chain.photometric
        obj["photometric"] = {"order": list(order), "params": params.as_dict()}
    if chain.geometric is not None:
        order, params = chain.geometric
        obj["geometric"] = {"order": list(order), "params": params.as_dict()}
    return obj


def _load_mask_source(mask_obj, base: Path) -> tuple[np.ndarray | None, MaskSpec | None]:
    if isinstance(mask_obj, str):
        path = base / mask_obj
        if path.suffix == ".ttwm":
            return binarize_mask(read_ttwm(path)), None
        return binarize_mask(read_png(path)), None
    if isinstance(mask_obj, dict):
        if "seed" not in mask_obj:
            raise FormatError("procedural mask spec needs a 'seed'")
        return None, MaskSpec(seed=int(mask_obj["seed"]),
                              shape=mask_obj.get("shape"),
                              frac=mask_obj.get("frac"))
    raise FormatError(f"mask must be a path or a spec object, got {type(mask_obj).__name__}")


def chain_from_json(obj: dict, base_dir=".") -> ChainSpec:
    """Load a chain from the interchange schema; paths resolve against base_dir."""
    if not isinstance(obj, dict):
        raise FormatError(f"chain spec must be a JSON object, got {type(obj).__name__}")
    base = Path(base_dir)
    semantic = None
    if "semantic" in obj:
        sem_obj = obj["semantic"]
        mask, mask_spec = _load_mask_source(sem_obj.get("mask"), base)
        fill_obj = sem_obj.get("fill", "surrogate")
        fill = None
        if isinstance(fill_obj, str) and fill_obj != "surrogate":
            path = base / fill_obj
            fill = read_ttwm(path) if path.suffix == ".ttwm" else read_png(path)
        semantic = SemanticEdit(mask=mask, fill=fill, mask_spec=mask_spec,
                                fill_seed=int(sem_obj.get("fill_seed", 0)))
    photometric = None
    if "photometric" in obj:
        pho_obj = obj["photometric"]
        try:
            params = PhoParams(**pho_obj.get("params", {}))
            photometric = (tuple(pho_obj["order"]), params)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad photometric block: {exc}") from exc
    geometric = None
    if "geometric" in obj:
        geo_obj = obj["geometric"]
        try:
            params = GeoParams(**geo_obj.get("params", {}))
            geometric = (tuple(geo_obj["order"]), params)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad geometric block: {exc}") from exc
    try:
        return ChainSpec(semantic=semantic, photometric=photometric, geometric=geometric)
    except ParameterError as exc:
        raise FormatError(str(exc)) from exc


def load_chain(path) -> ChainSpec:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable chain spec ({exc})") from exc
    return chain_from_json(obj, base_dir=path.parent)


def save_chain(chain: ChainSpec, path) -> None:
    Path(path).write_text(json.dumps(chain_to_json(chain), indent=2, sort_keys=True) + "\n")
