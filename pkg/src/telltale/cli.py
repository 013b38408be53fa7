"""Command-line entry point.

Subcommands cover the full workflow: `create-watermarks` renders the three
reference patterns, `transform` applies a chain JSON to an image, `extract`
produces a watermark bundle through a channel, `reason` recovers a chain
hypothesis from a bundle, `evaluate` compares two images, and `experiment`
runs seeded batch protocols.

Exit codes: 0 success, 1 usage error, 2 data/format error.

Angles are stored in radians inside chain files (the hue shift in fractions
of a full cycle); pass ``--degrees`` to read chain JSON with all angular
values — rotation, shears, and hue — given in degrees instead.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .bundle import WatermarkBundle, load_bundle, save_bundle
from .channel import (DEFAULT_ALPHA, NoiseSpec, extract_residual, oracle_extract)
from .harness import (experiment_config_from_json, run_experiment, write_report)
from .imagecore import FormatError, read_png, read_ttwm, write_png, write_ttwm
from .metrics import compute_metrics
from .patterns import PatternConfig, reference_bundle
from .reasoner import ReasonConfig, hypothesis_to_json, reason_chain
from .transforms import (ParameterError, apply_chain, chain_from_json, load_chain)

log = logging.getLogger("telltale")

DEFAULT_SEED = 0x7E117A1E  # spelled out: "TELLTALE"

_DEG_TO_RAD = math.pi / 180.0


class UsageError(Exception):
    """Raised for malformed invocations; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class GlobalOptions:
    """Options shared by every subcommand."""

    seed: int = DEFAULT_SEED
    verbosity: int = 0
    degrees: bool = False
    out_dir: Path | None = None


def _globals(args) -> GlobalOptions:
    return GlobalOptions(
        seed=DEFAULT_SEED if args.seed is None else args.seed,
        verbosity=args.verbose,
        degrees=args.degrees,
        out_dir=None if args.out_dir is None else Path(args.out_dir))


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ttwm":
        return read_ttwm(path)
    return read_png(path)


def _write_image(img: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".ttwm":
        write_ttwm(img, path)
    else:
        write_png(img, path)


def _chain_degrees_to_radians(obj: dict) -> dict:
    """Convert a chain-JSON object with angles in degrees to stored units."""
    out = json.loads(json.dumps(obj))  # deep copy, JSON types only
    geo = out.get("geometric")
    if geo and "params" in geo:
        for key in ("ro", "sh_x", "sh_y"):
            if key in geo["params"]:
                geo["params"][key] = float(geo["params"][key]) * _DEG_TO_RAD
    pho = out.get("photometric")
    if pho and "params" in pho and "h" in pho["params"]:
        pho["params"]["h"] = float(pho["params"]["h"]) / 360.0
    return out


def _load_chain_file(path, degrees: bool):
    path = Path(path)
    if not degrees:
        return load_chain(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid chain JSON {path}: {exc}") from exc
    return chain_from_json(_chain_degrees_to_radians(obj), base_dir=path.parent)


def _load_refs(refs_arg) -> WatermarkBundle:
    """Load a reference bundle from a manifest path or its directory."""
    path = Path(refs_arg)
    if path.is_dir():
        path = path / "manifest.json"
    return load_bundle(path)


def _out_dir(args, opts: GlobalOptions) -> Path:
    out = getattr(args, "out_dir", None)
    if out is None:
        out = opts.out_dir
    if out is None:
        raise UsageError("an output directory is required (--out-dir)")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_create_watermarks(args, opts: GlobalOptions) -> int:
    cfg = PatternConfig(height=args.height, width=args.width,
                        delta_phi=args.delta_phi * _DEG_TO_RAD if opts.degrees
                        else args.delta_phi,
                        xi_min=args.xi_min, xi_max=args.xi_max)
    out = _out_dir(args, opts)
    refs = reference_bundle(cfg)
    manifest = save_bundle(refs, out)
    for name, img in (("sem", refs.sem), ("pho", refs.pho), ("geo", refs.geo)):
        write_png(img, out / f"{name}.png")
    log.info("wrote reference bundle to %s", manifest)
    print(str(manifest))
    return 0


def _cmd_transform(args, opts: GlobalOptions) -> int:
    chain = _load_chain_file(args.chain, opts.degrees)
    img = _read_image(args.infile)
    _write_image(apply_chain(img, chain), args.outfile)
    log.info("transformed %s -> %s", args.infile, args.outfile)
    return 0


def _cmd_extract(args, opts: GlobalOptions) -> int:
    out = _out_dir(args, opts)
    if args.mode == "oracle":
        if args.refs is None or args.chain is None:
            raise UsageError("oracle extraction needs --refs and --chain")
        refs = _load_refs(args.refs)
        chain = _load_chain_file(args.chain, opts.degrees)
        noise = NoiseSpec(sigma=args.sigma, seed=opts.seed)
        bundle = oracle_extract(refs, chain, noise)
    elif args.mode == "residual":
        if args.infile is None:
            raise UsageError("residual extraction needs --in")
        carrier = _read_image(args.carrier) if args.carrier else None
        bundle = extract_residual(_read_image(args.infile), alpha=args.alpha,
                                  carrier=carrier)
    else:  # file: re-save an existing bundle (validates and normalizes)
        if args.bundle is None:
            raise UsageError("file extraction needs --bundle")
        loaded = load_bundle(args.bundle)
        bundle = WatermarkBundle(sem=loaded.sem, pho=loaded.pho, geo=loaded.geo,
                                 provenance="extracted")
    manifest = save_bundle(bundle, out)
    print(str(manifest))
    return 0


def _cmd_reason(args, opts: GlobalOptions) -> int:
    bundle = load_bundle(args.bundle)
    refs = _load_refs(args.refs)
    cfg_kwargs = _load_json(args.config) if args.config else {}
    try:
        cfg = ReasonConfig(**cfg_kwargs)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad reasoner config: {exc}") from exc
    hyp = reason_chain(bundle, refs, cfg)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    mask_path = out_path.with_name(out_path.stem + "_mask.ttwm")
    write_ttwm(hyp.binarized_mask, mask_path)
    obj = hypothesis_to_json(hyp)
    obj["binarized_mask"] = mask_path.name
    out_path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    log.info("wrote hypothesis to %s", out_path)
    print(str(out_path))
    return 0


def _cmd_evaluate(args, opts: GlobalOptions) -> int:
    a = _read_image(args.a)
    b = _read_image(args.b)
    which = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    report = compute_metrics(a, b, which=which or None)
    print(json.dumps(report.as_dict(), sort_keys=True, indent=2))
    return 0


def _cmd_experiment(args, opts: GlobalOptions) -> int:
    obj = _load_json(args.config)
    obj.setdefault("seed", opts.seed)
    cfg = experiment_config_from_json(obj)
    out = _out_dir(args, opts)
    log.info("running %d trials of %s (sigma=%g) on the %s backend",
             cfg.trials, cfg.chain_family, cfg.sigma, _kernels.backend_name())
    report = run_experiment(cfg)
    paths = write_report(report, out, previews=args.previews)
    print(str(paths["csv"]))
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="telltale",
                     description="Forensic tell-tale watermarks: create, transform, "
                                 "extract, and reason about transformation chains.")
    parser.add_argument("--seed", type=int, default=None,
                        help=f"global RNG seed (default 0x{DEFAULT_SEED:X})")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="increase log verbosity (-v info, -vv debug)")
    parser.add_argument("--degrees", action="store_true",
                        help="read angular values (rotation, shear, hue, delta-phi) "
                             "in degrees instead of stored units")
    parser.add_argument("--out-dir", default=None,
                        help="default output directory for subcommands that emit files")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("create-watermarks",
                       help="render the three reference watermarks as a bundle")
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--delta-phi", type=float, default=0.0, dest="delta_phi",
                   help="hue rotation offset of the photometric pattern")
    p.add_argument("--xi-min", type=float, default=2.0, dest="xi_min")
    p.add_argument("--xi-max", type=float, default=10.0, dest="xi_max")
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.set_defaults(func=_cmd_create_watermarks)

    p = sub.add_parser("transform", help="apply a chain JSON to an image")
    p.add_argument("--in", dest="infile", required=True, help="input PNG or TTWM")
    p.add_argument("--chain", required=True, help="chain JSON file")
    p.add_argument("--out", dest="outfile", required=True, help="output PNG or TTWM")
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("extract", help="produce an extracted watermark bundle")
    p.add_argument("--mode", choices=("oracle", "residual", "file"), default="oracle")
    p.add_argument("--refs", help="reference bundle manifest or its directory")
    p.add_argument("--chain", help="chain JSON (oracle mode)")
    p.add_argument("--sigma", type=float, default=0.0,
                   help="extraction noise std (oracle mode)")
    p.add_argument("--in", dest="infile", help="watermarked image (residual mode)")
    p.add_argument("--carrier", help="clean carrier image for informed extraction")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA,
                   help="embedding amplitude (residual mode)")
    p.add_argument("--bundle", help="existing bundle manifest (file mode)")
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("reason", help="recover a chain hypothesis from a bundle")
    p.add_argument("--bundle", required=True, help="extracted bundle manifest")
    p.add_argument("--refs", required=True,
                   help="reference bundle manifest or its directory")
    p.add_argument("--config", help="reasoner config JSON")
    p.add_argument("--out", required=True, help="hypothesis JSON output path")
    p.set_defaults(func=_cmd_reason)

    p = sub.add_parser("evaluate", help="compare two images with standard metrics")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--metrics", default="l1,linf,psnr,ssim,iou",
                   help="comma-separated subset of l1,linf,psnr,ssim,mae,iou")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", help="run a seeded batch experiment")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--previews", action="store_true",
                   help="also write per-trial mask previews as PNG")
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        opts = _globals(args)
        level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(opts.verbosity, 2)]
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args, opts)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
