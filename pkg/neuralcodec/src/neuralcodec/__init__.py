"""Toy neural watermark codec.

A jointly trained encoder/decoder pair around a differentiable twin of the
tell-tale transformation chain: the encoder hides the three reference
watermarks in a carrier as a bounded residual, simulated chains (sampled
with the same JSON-level generator the forensic harness uses) transform the
marked image inside the training graph, and the decoder learns to recover
the transformed watermarks. Trained checkpoints export extracted TTWM
bundles whose manifests the forensic reasoner consumes as-is; the two
packages share files, never code.
"""

from .chainlayer import (adjust, apply_chain, apply_geometric, apply_photometric,
                         apply_semantic, inverse_affine, recenter,
                         recentred_matrix, resolve_mask, surrogate_fill,
                         warp_bilinear, watermark_targets)
from .export import export_bundles
from .models import (Decoder, Encoder, UNet, WATERMARK_CHANNELS,
                     pack_watermarks, unpack_watermarks)
from .sampler import (DEFAULT_RANGES, FAMILIES, GEO_MEMBERS, PARAM_NAMES,
                      PHO_MEMBERS, load_ranges, mask_from_spec,
                      sample_chain_json)
from .tellio import (FormatError, load_bundle, load_chain_json, read_ttwm,
                     save_bundle, save_chain_json, write_ttwm)
from .training import (CarrierSource, CodecConfig, TrainResult, decoding_loss,
                       encoding_loss, load_carrier_image, load_checkpoint,
                       load_references, lpips_distance, mae, moving_average,
                       psnr, smooth_carrier, train)

__version__ = "0.1.0"

__all__ = [
    "adjust", "apply_chain", "apply_geometric", "apply_photometric",
    "apply_semantic", "inverse_affine", "recenter", "recentred_matrix",
    "resolve_mask", "surrogate_fill", "warp_bilinear", "watermark_targets",
    "export_bundles",
    "Decoder", "Encoder", "UNet", "WATERMARK_CHANNELS",
    "pack_watermarks", "unpack_watermarks",
    "DEFAULT_RANGES", "FAMILIES", "GEO_MEMBERS", "PARAM_NAMES", "PHO_MEMBERS",
    "load_ranges", "mask_from_spec", "sample_chain_json",
    "FormatError", "load_bundle", "load_chain_json", "read_ttwm",
    "save_bundle", "save_chain_json", "write_ttwm",
    "CarrierSource", "CodecConfig", "TrainResult", "decoding_loss",
    "encoding_loss", "load_carrier_image", "load_checkpoint",
    "load_references", "lpips_distance", "mae", "moving_average", "psnr",
    "smooth_carrier", "train",
    "__version__",
]
