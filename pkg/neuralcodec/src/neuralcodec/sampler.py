"""Random transformation chains as JSON documents.

This sampler is a JSON-level twin of the forensic harness: the same family
table, the same parameter ranges (shipped as a data file shared across the
boundary), and the same RNG consumption order, so equal seeds yield chain
documents that serialize identically on both sides. The procedural mask
descriptor carried by each chain is likewise regenerated here with the
exact generator the toolkit uses.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .tellio import FormatError

PHO_MEMBERS = ("b", "c", "h", "s")
GEO_MEMBERS = ("ro", "tr", "sc", "sh")

# family name -> parameters that vary; "tr"/"sh" cover both of their axes
FAMILIES = {
    "Syn&B": ("b",),
    "Syn&C": ("c",),
    "Syn&H": ("h",),
    "Syn&S": ("s",),
    "Syn&Ro": ("ro",),
    "Syn&Tr": ("tr",),
    "Syn&Sc": ("sc",),
    "Syn&Sh": ("sh",),
    "Syn&B&Ro": ("b", "ro"),
    "Syn&C&Tr": ("c", "tr"),
    "Syn&H&Sc": ("h", "sc"),
    "Syn&S&Sh": ("s", "sh"),
}

PARAM_NAMES = ("ro", "tr_x", "tr_y", "sc", "sh_x", "sh_y", "b", "c", "h", "s")

_GEO_PARAM_NAMES = {"ro": ("ro",), "tr": ("tr_x", "tr_y"),
                    "sc": ("sc",), "sh": ("sh_x", "sh_y")}

_IDENTITY_PHO = {"b": 1.0, "c": 1.0, "h": 0.0, "s": 1.0}
_IDENTITY_GEO = {"ro": 0.0, "tr_x": 0.0, "tr_y": 0.0,
                 "sc": 1.0, "sh_x": 0.0, "sh_y": 0.0}


def load_ranges(path=None) -> dict:
    """Parameter boxes, name -> (lo, hi); the shared defaults when no path."""
    if path is None:
        text = resources.files("neuralcodec").joinpath(
            "data/default_ranges.json").read_text()
    else:
        text = open(path).read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad ranges file: {exc}") from exc
    unknown = set(obj) - set(PARAM_NAMES)
    if unknown:
        raise FormatError(f"unknown range keys {sorted(unknown)}")
    return {name: (float(lo), float(hi)) for name, (lo, hi) in obj.items()}


DEFAULT_RANGES = load_ranges()


def _range_of(ranges: dict, name: str):
    lo, hi = ranges.get(name, DEFAULT_RANGES[name])
    return float(lo), float(hi)


def sample_chain_json(family, ranges=None, seed=0, custom_active=()) -> dict:
    """Draw one random chain of a family as its JSON document.

    `seed` may be an int or a `numpy.random.SeedSequence`; equal seeds give
    documents equal to the forensic harness's sampler under the same ranges.
    Inactive parameters sit at identity; the semantic block is always present
    as a procedural mask descriptor plus a surrogate fill seed.
    """
    if family == "custom":
        active = tuple(custom_active)
        bad = set(active) - set(PHO_MEMBERS) - set(GEO_MEMBERS)
        if bad or not active:
            raise FormatError(
                f"custom family needs members from {PHO_MEMBERS + GEO_MEMBERS}, "
                f"got {custom_active!r}")
    else:
        try:
            active = FAMILIES[family]
        except KeyError:
            raise FormatError(f"unknown chain family {family!r}") from None
    ranges = dict(ranges) if ranges else {}
    rng = np.random.default_rng(seed)

    obj = {"semantic": {
        "mask": {"shape": None, "seed": int(rng.integers(0, 2**32)), "frac": None},
        "fill": "surrogate",
        "fill_seed": int(rng.integers(0, 2**32)),
    }}

    if any(m in active for m in PHO_MEMBERS):
        order = [PHO_MEMBERS[i] for i in rng.permutation(4)]
        values = dict(_IDENTITY_PHO)
        for name in PHO_MEMBERS:
            if name in active:
                lo, hi = _range_of(ranges, name)
                values[name] = float(rng.uniform(lo, hi))
        obj["photometric"] = {"order": order, "params": values}

    if any(m in active for m in GEO_MEMBERS):
        order = [GEO_MEMBERS[i] for i in rng.permutation(4)]
        values = dict(_IDENTITY_GEO)
        for member in GEO_MEMBERS:
            if member in active:
                for name in _GEO_PARAM_NAMES[member]:
                    lo, hi = _range_of(ranges, name)
                    values[name] = float(rng.uniform(lo, hi))
        obj["geometric"] = {"order": order, "params": values}

    return obj


def mask_from_spec(height: int, width: int, seed: int, shape=None, frac=None) -> np.ndarray:
    """Materialize a procedural mask descriptor: one axis-aligned rectangle or
    ellipse covering ~5–30% of the area, identical to the toolkit's generator."""
    rng = np.random.default_rng(seed)
    drawn_shape = ("rect", "ellipse")[int(rng.integers(0, 2))]
    drawn_frac = float(rng.uniform(0.05, 0.30))
    gamma = float(rng.uniform(0.8, 1.25))  # aspect skew, keeps extents inside
    if shape is None:
        shape = drawn_shape
    if frac is None:
        frac = drawn_frac
    if shape not in ("rect", "ellipse"):
        raise FormatError(f"mask shape must be rect or ellipse, got {shape!r}")
    if not 0.0 < frac <= 0.5:
        raise FormatError(f"mask area fraction must be in (0, 0.5], got {frac}")

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
