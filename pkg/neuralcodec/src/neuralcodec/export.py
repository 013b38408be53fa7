"""Bundle export: embed, transform, decode, and write TTWM bundles.

For each (carrier, chain) pair the trained encoder embeds the reference
watermarks, the chain document is applied to the marked image, the decoder
extracts the watermark channels, and the result lands on disk as a TTWM
bundle whose manifest the forensic reasoner consumes directly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from . import chainlayer
from .models import pack_watermarks, unpack_watermarks
from .tellio import FormatError, load_chain_json, save_bundle
from .training import load_carrier_image, load_checkpoint


def _as_carrier(image, size: int) -> torch.Tensor:
    if isinstance(image, (str, Path)):
        return load_carrier_image(image, size)
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"carriers are (H,W,3) images, got shape {arr.shape}")
    if arr.shape[:2] != (size, size):
        raise FormatError(f"carrier is {arr.shape[:2]}, checkpoint wants {(size, size)}")
    return torch.from_numpy(np.clip(arr, 0.0, 1.0))


def _as_chain(chain) -> dict:
    if isinstance(chain, (str, Path)):
        return load_chain_json(chain)
    if not isinstance(chain, dict):
        raise FormatError(f"chains are JSON objects or paths, got {type(chain).__name__}")
    return chain


def export_bundles(checkpoint, images, chains, out_dir) -> list:
    """Write one extracted bundle per (image, chain) pair; returns manifests."""
    if len(images) != len(chains):
        raise FormatError(f"got {len(images)} images but {len(chains)} chains")
    encoder, decoder, payload = load_checkpoint(checkpoint)
    size = payload["config"]["size"]
    refs = {k: torch.from_numpy(np.ascontiguousarray(v, dtype=np.float32))
            for k, v in payload["refs"].items()}
    wpack = pack_watermarks(refs["sem"], refs["pho"], refs["geo"]).unsqueeze(0)

    out_dir = Path(out_dir)
    manifests = []
    with torch.no_grad():
        for i, (image, chain) in enumerate(zip(images, chains)):
            x = _as_carrier(image, size).permute(2, 0, 1).unsqueeze(0)
            x_w = encoder(x, wpack)
            x_t = chainlayer.apply_chain(x_w[0].permute(1, 2, 0), _as_chain(chain))
            pred = decoder(x_t.permute(2, 0, 1).unsqueeze(0))[0]
            parts = unpack_watermarks(pred)
            manifests.append(save_bundle(
                parts["sem"].numpy(), parts["pho"].numpy(), parts["geo"].numpy(),
                out_dir / f"bundle_{i:03d}", source="extracted"))
    return manifests
