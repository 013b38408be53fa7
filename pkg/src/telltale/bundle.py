"""Watermark bundles and their on-disk manifest format.

A bundle is the triple (sem, pho, geo) of watermark images — reference,
ground-truth-transformed, or extracted — plus a provenance tag. On disk a
bundle is a manifest JSON ``{"sem": "sem.ttwm", "pho": "pho.ttwm",
"geo": "geo.ttwm", "height": H, "width": W, "source": "..."}`` next to the
three TTWM payload files; the round-trip is lossless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import FormatError, read_ttwm, write_ttwm

PROVENANCES = ("reference", "ground_truth", "extracted")


@dataclass
class WatermarkBundle:
    sem: np.ndarray   # 1-channel
    pho: np.ndarray   # 3-channel
    geo: np.ndarray   # 1-channel
    provenance: str = "reference"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise FormatError(f"provenance must be one of {PROVENANCES}")
        shapes = {self.sem.shape[:2], self.pho.shape[:2], self.geo.shape[:2]}
        if len(shapes) != 1:
            raise FormatError(f"bundle members disagree on height/width: {shapes}")

    @property
    def height(self) -> int:
        return self.sem.shape[0]

    @property
    def width(self) -> int:
        return self.sem.shape[1]


def save_bundle(bundle: WatermarkBundle, out_dir) -> Path:
    """Write sem/pho/geo TTWM files plus the manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = {"sem": bundle.sem, "pho": bundle.pho, "geo": bundle.geo}
    for name, img in names.items():
        write_ttwm(img, out_dir / f"{name}.ttwm")
    manifest = {
        "sem": "sem.ttwm",
        "pho": "pho.ttwm",
        "geo": "geo.ttwm",
        "height": bundle.height,
        "width": bundle.width,
        "source": bundle.provenance,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_bundle(manifest_path) -> WatermarkBundle:
    """Load a bundle from its manifest JSON."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{manifest_path}: unreadable manifest ({exc})") from exc
    for key in ("sem", "pho", "geo", "height", "width"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: manifest missing key {key!r}")
    base = manifest_path.parent
    sem = read_ttwm(base / manifest["sem"])
    pho = read_ttwm(base / manifest["pho"])
    geo = read_ttwm(base / manifest["geo"])
    for name, img in (("sem", sem), ("pho", pho), ("geo", geo)):
        if img.shape[:2] != (manifest["height"], manifest["width"]):
            raise FormatError(
                f"{manifest_path}: {name} payload shape {img.shape[:2]} does not match "
                f"manifest {(manifest['height'], manifest['width'])}")
    source = manifest.get("source", "extracted")
    provenance = source if source in PROVENANCES else "extracted"
    return WatermarkBundle(sem=sem, pho=pho, geo=geo, provenance=provenance)
