"""Tell-tale watermarks: forensic tracing of image transformation chains.

Three reference watermarks co-transform with a carrier image: a blank
semantic canvas that records masked edits, a colour wheel that records
photometric adjustments, and an interference pattern that records geometric
warps. Given the extracted (possibly noisy) watermarks, the reasoner
recovers which transformations were applied, in what order within each
class, and with what parameters.
"""

from .bundle import WatermarkBundle, load_bundle, save_bundle
from .channel import (DEFAULT_ALPHA, NoiseSpec, embed_residual, extract_residual,
                      oracle_extract, payload_plane)
from .harness import (FAMILIES, ExperimentConfig, ExperimentReport, TrialRow,
                      run_experiment, sample_chain, write_report)
from .imagecore import (FormatError, read_png, read_ttwm, write_png, write_ttwm)
from .metrics import MetricReport, compute_metrics, iou, l1, linf, mae, psnr, ssim
from .patterns import (PatternConfig, make_geometric, make_photometric,
                       make_reference_patterns, make_semantic, reference_bundle)
from .reasoner import (ChainHypothesis, ClassResult, ReasonConfig, fd_gradient,
                       optimize_class, reason_chain, reason_geometric,
                       reason_photometric, reason_semantic)
from .transforms import (GEO_BOXES, PHO_BOXES, ChainSpec, GeoParams, MaskSpec,
                         ParameterError, PhoParams, SemanticEdit, adjust,
                         apply_chain, apply_geometric, apply_photometric,
                         apply_semantic, chain_from_json, chain_to_json,
                         ground_truth_watermarks, inverse_affine, load_chain,
                         make_mask, recenter, save_chain, warp_bilinear)

__version__ = "0.1.0"

__all__ = [
    "WatermarkBundle", "load_bundle", "save_bundle",
    "DEFAULT_ALPHA", "NoiseSpec", "embed_residual", "extract_residual",
    "oracle_extract", "payload_plane",
    "FAMILIES", "ExperimentConfig", "ExperimentReport", "TrialRow",
    "run_experiment", "sample_chain", "write_report",
    "FormatError", "read_png", "read_ttwm", "write_png", "write_ttwm",
    "MetricReport", "compute_metrics", "iou", "l1", "linf", "mae", "psnr", "ssim",
    "PatternConfig", "make_geometric", "make_photometric",
    "make_reference_patterns", "make_semantic", "reference_bundle",
    "ChainHypothesis", "ClassResult", "ReasonConfig", "fd_gradient",
    "optimize_class", "reason_chain", "reason_geometric", "reason_photometric",
    "reason_semantic",
    "GEO_BOXES", "PHO_BOXES", "ChainSpec", "GeoParams", "MaskSpec",
    "ParameterError", "PhoParams", "SemanticEdit", "adjust", "apply_chain",
    "apply_geometric", "apply_photometric", "apply_semantic", "chain_from_json",
    "chain_to_json", "ground_truth_watermarks", "inverse_affine", "load_chain",
    "make_mask", "recenter", "save_chain", "warp_bilinear",
    "__version__",
]
