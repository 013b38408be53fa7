"""Batch experiment runner: sample chains, extract, reason, tabulate errors.

A chain family names which parameters vary; everything else stays at
identity. Every family includes a semantic edit with a seeded random mask
("Syn"), optionally combined with one photometric and/or one geometric
parameter. A transformation block appears in the sampled chain only when one
of its parameters is active — an absent block and an identity block act
identically on images, and absent keeps the ground-truth bundles exact.

Errors are reported in each parameter's natural reporting unit: angles as
fractions of a full cycle (radians / 2π), translations as fractions of the
image side, scale and the photometric factors in factor units, hue in
fractional-cycle units as stored.

Reports are deterministic: trial seeds are spawned from the config seed, the
trial loop is an ordered reduction, and `write_report` emits byte-stable
`report.csv` / `aggregate.json`. Wall-clock timings go to a separate
`timing.json` so the stable artifacts never embed timing jitter.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .bundle import WatermarkBundle
from .channel import NoiseSpec, embed_residual, extract_residual, oracle_extract
from .imagecore import clamp01, write_png
from .patterns import PatternConfig, reference_bundle
from .reasoner import ReasonConfig, reason_chain
from .transforms import (GEO_BOXES, PHO_BOXES, ChainSpec, GeoParams, MaskSpec,
                         ParameterError, PhoParams, SemanticEdit, apply_chain,
                         compose_geometric_matrix, warp_mask_nearest)
from .metrics import iou

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

_PHO_ACTIVE = ("b", "c", "h", "s")
_GEO_ACTIVE = ("ro", "tr", "sc", "sh")

PARAM_NAMES = ("ro", "tr_x", "tr_y", "sc", "sh_x", "sh_y", "b", "c", "h", "s")
ANGLE_PARAMS = frozenset({"ro", "sh_x", "sh_y"})

DEFAULT_RANGES = {**GEO_BOXES, **PHO_BOXES}

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ExperimentConfig:
    """One batch run: a chain family, trial count, channel, and seeding."""

    chain_family: str = "Syn&Ro"
    trials: int = 30
    sigma: float = 0.0             # extraction-noise standard deviation
    channel: str = "oracle"        # "oracle" | "residual"
    ranges: dict | None = None     # param name -> (lo, hi); None = full boxes
    seed: int = 0
    height: int = 128
    width: int = 128
    max_iter: int = 100            # reasoner gradient steps
    step: float = 0.01             # reasoner step scale
    restarts: int = 3              # reasoner restarts per permutation
    plateau: int = 25              # reasoner stall cutoff (0 disables)
    n_workers: int | None = None   # reasoner permutation threads
    custom_active: tuple = ()      # varied members when chain_family="custom"

    def __post_init__(self):
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if self.sigma < 0:
            raise ParameterError("sigma must be >= 0")
        if self.step <= 0:
            raise ParameterError("step must be > 0")
        if self.restarts < 1:
            raise ParameterError("restarts must be >= 1")
        if self.plateau < 0:
            raise ParameterError("plateau must be >= 0")
        if self.channel not in ("oracle", "residual"):
            raise ParameterError(f"unknown channel mode {self.channel!r}")
        if self.chain_family == "custom":
            bad = set(self.custom_active) - set(_PHO_ACTIVE) - set(_GEO_ACTIVE)
            if bad or not self.custom_active:
                raise ParameterError(
                    f"custom family needs members from {_PHO_ACTIVE + _GEO_ACTIVE}, "
                    f"got {self.custom_active!r}")
        elif self.chain_family not in FAMILIES:
            raise ParameterError(f"unknown chain family {self.chain_family!r}")
        if self.ranges is not None:
            unknown = set(self.ranges) - set(DEFAULT_RANGES)
            if unknown:
                raise ParameterError(f"unknown range keys {sorted(unknown)}")

    @property
    def active_members(self) -> tuple:
        if self.chain_family == "custom":
            return tuple(self.custom_active)
        return FAMILIES[self.chain_family]


@dataclass
class TrialRow:
    """Per-trial record: truth, estimate, reporting-unit errors, quality."""

    trial: int
    status: str                  # "ok" or the failure description
    true_params: dict = field(default_factory=dict)
    est_params: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    geo_loss: float = math.nan
    pho_loss: float = math.nan
    iou: float = math.nan
    wall_time_s: float = math.nan
    est_mask: np.ndarray | None = None   # binarized semantic estimate, for previews


@dataclass
class ExperimentReport:
    """All trial rows of one run plus their aggregate statistics."""

    config: ExperimentConfig
    rows: list
    aggregate: dict


def experiment_config_from_json(obj: dict) -> ExperimentConfig:
    """Build a config from its JSON form (the `experiment --config` schema)."""
    kwargs = dict(obj)
    if "ranges" in kwargs and kwargs["ranges"] is not None:
        kwargs["ranges"] = {k: (float(v[0]), float(v[1]))
                            for k, v in kwargs["ranges"].items()}
    if "custom_active" in kwargs:
        kwargs["custom_active"] = tuple(kwargs["custom_active"])
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ParameterError(f"bad experiment config: {exc}") from exc


# ---------------------------------------------------------------------------
# Chain sampling
# ---------------------------------------------------------------------------

def _range_of(ranges: dict, name: str):
    lo, hi = ranges.get(name, DEFAULT_RANGES[name])
    return float(lo), float(hi)


def sample_chain(family, ranges=None, seed=0, custom_active=()) -> ChainSpec:
    """Draw one random chain of a family; inactive parameters sit at identity.

    `seed` may be an int or a `numpy.random.SeedSequence`; equal seeds give
    equal chains. The semantic mask is carried as a procedural descriptor so
    the chain serializes without side files.
    """
    if family == "custom":
        active = tuple(custom_active)
    else:
        try:
            active = FAMILIES[family]
        except KeyError:
            raise ParameterError(f"unknown chain family {family!r}") from None
    ranges = dict(ranges) if ranges else {}
    rng = np.random.default_rng(seed)

    semantic = SemanticEdit(
        mask_spec=MaskSpec(seed=int(rng.integers(0, 2**32))),
        fill_seed=int(rng.integers(0, 2**32)))

    photometric = None
    if any(m in active for m in _PHO_ACTIVE):
        order = tuple(_PHO_ACTIVE[i] for i in rng.permutation(4))
        values = {}
        for name in _PHO_ACTIVE:
            if name in active:
                lo, hi = _range_of(ranges, name)
                values[name] = float(rng.uniform(lo, hi))
        photometric = (order, PhoParams(**values))

    geometric = None
    if any(m in active for m in _GEO_ACTIVE):
        order = tuple(_GEO_ACTIVE[i] for i in rng.permutation(4))
        values = {}
        for member, names in (("ro", ("ro",)), ("tr", ("tr_x", "tr_y")),
                              ("sc", ("sc",)), ("sh", ("sh_x", "sh_y"))):
            if member in active:
                for name in names:
                    lo, hi = _range_of(ranges, name)
                    values[name] = float(rng.uniform(lo, hi))
        geometric = (order, GeoParams(**values))

    return ChainSpec(semantic=semantic, photometric=photometric, geometric=geometric)


# ---------------------------------------------------------------------------
# Trial execution
# ---------------------------------------------------------------------------

def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


def _smooth_carrier(height: int, width: int, seed) -> np.ndarray:
    """A seeded smooth random RGB carrier for the residual channel."""
    rng = np.random.default_rng(seed)
    base = gaussian_filter(rng.random((height, width, 3)), sigma=(6.0, 6.0, 0.0))
    lo, hi = base.min(), base.max()
    span = hi - lo if hi > lo else 1.0
    return 0.15 + 0.7 * (base - lo) / span


def _extract_bundle(cfg: ExperimentConfig, refs: WatermarkBundle, chain: ChainSpec,
                    noise_ss, carrier_ss) -> WatermarkBundle:
    if cfg.channel == "oracle":
        noise = NoiseSpec(sigma=cfg.sigma, seed=_seed_int(noise_ss))
        return oracle_extract(refs, chain, noise)
    carrier = _smooth_carrier(cfg.height, cfg.width, carrier_ss)
    attacked = apply_chain(embed_residual(carrier, refs), chain)
    if cfg.sigma > 0:
        rng = np.random.default_rng(_seed_int(noise_ss))
        attacked = clamp01(attacked + rng.normal(0.0, cfg.sigma, size=attacked.shape))
    return extract_residual(attacked)


def _chain_true_params(chain: ChainSpec) -> dict:
    geo = chain.geometric[1] if chain.geometric is not None else GeoParams()
    pho = chain.photometric[1] if chain.photometric is not None else PhoParams()
    return {**geo.as_dict(), **pho.as_dict()}


def reporting_error(name: str, true_value: float, est_value: float) -> float:
    """Absolute error in the parameter's reporting unit (cycles for angles)."""
    err = abs(est_value - true_value)
    return err / TWO_PI if name in ANGLE_PARAMS else err


def _true_transported_mask(chain: ChainSpec, height: int, width: int) -> np.ndarray:
    """The semantic mask carried through the true geometric block in one hop."""
    mask = chain.semantic.resolve_mask(height, width)
    if chain.geometric is None:
        return mask
    order, params = chain.geometric
    return warp_mask_nearest(mask, compose_geometric_matrix(order, params, width, height))


def _run_trial(cfg: ExperimentConfig, refs: WatermarkBundle, trial: int,
               trial_ss: np.random.SeedSequence) -> TrialRow:
    chain_ss, noise_ss, carrier_ss = trial_ss.spawn(3)
    try:
        chain = sample_chain(cfg.chain_family, cfg.ranges, chain_ss,
                             custom_active=cfg.custom_active)
        bundle = _extract_bundle(cfg, refs, chain, noise_ss, carrier_ss)
        t0 = time.perf_counter()
        hyp = reason_chain(bundle, refs,
                           ReasonConfig(max_iter=cfg.max_iter, step=cfg.step,
                                        restarts=cfg.restarts, plateau=cfg.plateau,
                                        n_workers=cfg.n_workers))
        wall = time.perf_counter() - t0
    except Exception as exc:  # per-row failure, not fatal to the run
        return TrialRow(trial=trial, status=f"error: {exc}")

    true_params = _chain_true_params(chain)
    est_params = {**hyp.geometric.params.as_dict(), **hyp.photometric.params.as_dict()}
    errors = {name: reporting_error(name, true_params[name], est_params[name])
              for name in PARAM_NAMES}
    true_mask = _true_transported_mask(chain, cfg.height, cfg.width)
    return TrialRow(trial=trial, status="ok",
                    true_params=true_params, est_params=est_params, errors=errors,
                    geo_loss=hyp.geometric.loss, pho_loss=hyp.photometric.loss,
                    iou=iou(hyp.binarized_mask, true_mask),
                    wall_time_s=wall, est_mask=hyp.binarized_mask)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run all trials of a config; an ordered, reproducible reduction."""
    refs = reference_bundle(PatternConfig(height=cfg.height, width=cfg.width))
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.trials)
    rows = [_run_trial(cfg, refs, trial, child)
            for trial, child in enumerate(children)]
    return ExperimentReport(config=cfg, rows=rows, aggregate=aggregate_rows(rows))


def aggregate_rows(rows) -> dict:
    """Mean/std of each reporting-unit error plus quality means, ok rows only."""
    ok = [r for r in rows if r.status == "ok"]
    agg: dict = {"trials": len(rows), "ok_trials": len(ok)}
    errors = {}
    for name in PARAM_NAMES:
        values = [r.errors[name] for r in ok]
        if values:
            errors[name] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
    agg["errors"] = errors
    for attr in ("geo_loss", "pho_loss", "iou"):
        values = [getattr(r, attr) for r in ok]
        agg[f"mean_{attr}"] = float(np.mean(values)) if values else math.nan
    return agg


# ---------------------------------------------------------------------------
# Report artifacts
# ---------------------------------------------------------------------------

CSV_COLUMNS = (("trial", "status")
               + tuple(f"true_{n}" for n in PARAM_NAMES)
               + tuple(f"est_{n}" for n in PARAM_NAMES)
               + tuple(f"err_{n}" for n in PARAM_NAMES)
               + ("geo_loss", "pho_loss", "iou"))


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _row_cells(row: TrialRow):
    cells = [row.trial, row.status]
    for group in (row.true_params, row.est_params, row.errors):
        cells.extend(float(group.get(n, math.nan)) for n in PARAM_NAMES)
    cells.extend([float(row.geo_loss), float(row.pho_loss), float(row.iou)])
    return [_cell(c) for c in cells]


def write_report(report: ExperimentReport, out_dir, previews: bool = False) -> dict:
    """Write report.csv + aggregate.json (byte-stable) and timing.json.

    Returns the artifact paths. With `previews`, each ok trial's binarized
    semantic-mask estimate is also written as `trial_NNN_mask.png`.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow(_row_cells(row))

    agg_path = out / "aggregate.json"
    agg = dict(report.aggregate)
    agg["chain_family"] = report.config.chain_family
    agg["sigma"] = report.config.sigma
    agg["seed"] = report.config.seed
    agg_path.write_text(json.dumps(agg, sort_keys=True, indent=2) + "\n")

    timing_path = out / "timing.json"
    walls = [r.wall_time_s for r in report.rows if r.status == "ok"]
    timing = {"per_trial_s": [r.wall_time_s for r in report.rows],
              "mean_trial_s": float(np.mean(walls)) if walls else math.nan,
              "total_s": float(np.sum(walls)) if walls else 0.0}
    timing_path.write_text(json.dumps(timing, indent=2) + "\n")

    if previews:
        for row in report.rows:
            if row.est_mask is not None:
                write_png(row.est_mask, out / f"trial_{row.trial:03d}_mask.png")

    return {"csv": csv_path, "aggregate": agg_path, "timing": timing_path}
