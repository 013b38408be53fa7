"""File interchange with the forensic toolkit: TTWM images, bundle manifests,
and chain documents.

The codec and the toolkit share no code — only files — so the formats are
implemented here from their byte-level definitions. A TTWM file is the magic
``TTWM``, a version byte (1), height/width/channels as little-endian uint32,
then height·width·channels little-endian float32 samples in row-major,
channel-last order. A watermark bundle is a directory holding ``sem.ttwm``
(1 channel), ``pho.ttwm`` (3 channels) and ``geo.ttwm`` (1 channel) next to a
``manifest.json`` naming them; a chain document is the ChainSpec JSON object.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

TTWM_MAGIC = b"TTWM"
TTWM_VERSION = 1

_HEADER = struct.Struct("<4sBIII")

BUNDLE_SOURCES = ("reference", "ground_truth", "extracted")


class FormatError(ValueError):
    """Raised for malformed TTWM payloads, manifests, or chain documents."""


# ---------------------------------------------------------------------------
# TTWM images
# ---------------------------------------------------------------------------

def write_ttwm(img: np.ndarray, path) -> None:
    """Write a (H,W) or (H,W,3) float image as a TTWM file (binary32)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise FormatError(f"TTWM images are (H,W) or (H,W,3), got shape {img.shape}")
    h, w = img.shape[:2]
    c = 1 if img.ndim == 2 else 3
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
    return data.reshape(h, w) if c == 1 else data.reshape(h, w, c)


# ---------------------------------------------------------------------------
# Watermark bundles
# ---------------------------------------------------------------------------

def save_bundle(sem: np.ndarray, pho: np.ndarray, geo: np.ndarray, out_dir,
                source: str = "extracted") -> Path:
    """Write the three member TTWM files plus the manifest; returns its path."""
    if source not in BUNDLE_SOURCES:
        raise FormatError(f"source must be one of {BUNDLE_SOURCES}, got {source!r}")
    shapes = {np.shape(sem)[:2], np.shape(pho)[:2], np.shape(geo)[:2]}
    if len(shapes) != 1:
        raise FormatError(f"bundle members disagree on height/width: {shapes}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, img in (("sem", sem), ("pho", pho), ("geo", geo)):
        write_ttwm(img, out_dir / f"{name}.ttwm")
    height, width = next(iter(shapes))
    manifest = {
        "sem": "sem.ttwm",
        "pho": "pho.ttwm",
        "geo": "geo.ttwm",
        "height": int(height),
        "width": int(width),
        "source": source,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_bundle(manifest_path) -> dict:
    """Load a bundle manifest into ``{"sem": …, "pho": …, "geo": …, "source": …}``."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{manifest_path}: unreadable manifest ({exc})") from exc
    for key in ("sem", "pho", "geo", "height", "width"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: manifest missing key {key!r}")
    base = manifest_path.parent
    out = {"source": manifest.get("source", "extracted")}
    for name in ("sem", "pho", "geo"):
        img = read_ttwm(base / manifest[name])
        if img.shape[:2] != (manifest["height"], manifest["width"]):
            raise FormatError(
                f"{manifest_path}: {name} payload shape {img.shape[:2]} does not "
                f"match manifest {(manifest['height'], manifest['width'])}")
        out[name] = img
    return out


# ---------------------------------------------------------------------------
# Chain documents
# ---------------------------------------------------------------------------

def load_chain_json(path) -> dict:
    """Read a chain document; the codec works on the raw JSON object."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable chain document ({exc})") from exc
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: chain document must be a JSON object")
    return obj


def save_chain_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
