"""Joint encoder/decoder training against simulated transformation chains.

Each step embeds the reference watermarks into a batch of carriers, pushes
every marked image through a freshly sampled chain inside the training graph,
decodes the transformed result, and optimizes the sum of an encoding loss
(mean-absolute plus maximum-absolute deviation from the carrier) and a
decoding loss (mean-absolute deviation from the ground-truth transformed
watermarks, summed over the semantic/photometric/geometric channels). The
loop is deterministic for a fixed seed; carriers come from a directory of
images or, by default, from a seeded smooth-noise generator.

Two scheduling choices break the cold-start equilibrium in which the encoder
collapses to the identity before the decoder has learned to use the embedded
signal: the encoding-loss weight ramps in linearly over the first
``encode_ramp`` steps (the decoder learns to read a loud watermark first, the
fidelity pressure then compresses it), and the learning rate warms up
linearly for ``lr_warmup`` steps before a cosine decay. By default each
sample draws its chain from a uniform mixture over the canonical
transformation families rather than always the full composite; single-class
chains keep the decoder's output tied to its input (a brightness factor, say,
is only readable from the image), which keeps gradient flowing into the
encoder. The decoder itself is constructed with the reference watermark pack
as constant conditioning channels, so it only has to locate and undo the
chain rather than memorize the references in its weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import chainlayer
from .models import Decoder, Encoder, pack_watermarks
from .sampler import FAMILIES, GEO_MEMBERS, PHO_MEMBERS, load_ranges, sample_chain_json
from .tellio import FormatError, load_bundle, read_ttwm

ALL_MEMBERS = PHO_MEMBERS + GEO_MEMBERS
FAMILY_NAMES = tuple(FAMILIES)


@dataclass
class CodecConfig:
    """One training run: data, architecture, chain simulation, and seeding."""

    size: int = 64                   # image height = width; divisible by 8
    base_channels: int = 32          # base latent channels of both U-Nets
    lr: float = 1e-3
    steps: int = 2000
    batch_size: int = 1
    dataset_dir: str | None = None   # directory of carrier images; None = procedural
    refs_manifest: str | None = None # reference watermark bundle produced by the toolkit
    ranges: object = None            # dict name -> (lo, hi), a ranges-file path, or None
    chain_family: str = "mixed"      # a family name, "mixed" (uniform over all), or "custom"
    custom_active: tuple = ALL_MEMBERS
    encode_weight: float = 1.0
    decode_weight: float = 1.0
    encode_ramp: int = 500           # steps to ramp the encoding weight in (0 = constant)
    encode_floor: float = 0.1        # starting fraction of the encoding weight on the ramp
    lr_schedule: str = "cosine"      # "cosine" or "constant"
    lr_warmup: int = 100             # linear learning-rate warmup steps (0 = none)
    residual_amp: float = 0.3        # soft bound on the embedded residual's amplitude
    init_from: str | None = None     # checkpoint to warm-start both networks from
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self):
        if self.size <= 0 or self.size % 8:
            raise FormatError(f"size must be a positive multiple of 8, got {self.size}")
        if self.base_channels < 8:
            raise FormatError(f"base_channels must be >= 8, got {self.base_channels}")
        if self.lr <= 0:
            raise FormatError(f"lr must be > 0, got {self.lr}")
        if self.steps < 0:
            raise FormatError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise FormatError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.encode_weight < 0 or self.decode_weight < 0:
            raise FormatError("loss weights must be >= 0")
        if self.encode_ramp < 0:
            raise FormatError(f"encode_ramp must be >= 0, got {self.encode_ramp}")
        if not 0.0 <= self.encode_floor <= 1.0:
            raise FormatError(f"encode_floor must be in [0, 1], got {self.encode_floor}")
        if self.lr_warmup < 0:
            raise FormatError(f"lr_warmup must be >= 0, got {self.lr_warmup}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise FormatError(f"lr_schedule must be 'cosine' or 'constant', "
                              f"got {self.lr_schedule!r}")
        if self.residual_amp <= 0:
            raise FormatError(f"residual_amp must be > 0, got {self.residual_amp}")
        if self.chain_family not in ("custom", "mixed") and self.chain_family not in FAMILIES:
            raise FormatError(f"unknown chain family {self.chain_family!r}")

    def resolved_ranges(self) -> dict:
        if self.ranges is None:
            return load_ranges()
        if isinstance(self.ranges, (str, Path)):
            return load_ranges(self.ranges)
        return {name: (float(lo), float(hi)) for name, (lo, hi) in self.ranges.items()}


@dataclass
class TrainResult:
    checkpoint: Path
    loss_log: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Carriers and references
# ---------------------------------------------------------------------------

def smooth_carrier(size: int, seed) -> torch.Tensor:
    """A seeded multi-octave smooth random RGB carrier in [0.15, 0.85],
    channel-last. Three octaves of bilinear noise give the carriers enough
    texture that surrogate-filled mask regions differ visibly from their
    surroundings."""
    rng = np.random.default_rng(seed)
    up = torch.zeros(size, size, 3, dtype=torch.float64)
    for denom, amp in ((8, 1.0), (4, 0.5), (2, 0.25)):
        cells = max(2, size // denom)
        low = torch.from_numpy(rng.random((cells, cells, 3), dtype=np.float64))
        up += amp * torch.nn.functional.interpolate(
            low.permute(2, 0, 1).unsqueeze(0), size=(size, size),
            mode="bilinear", align_corners=False)[0].permute(1, 2, 0)
    lo, hi = up.min(), up.max()
    span = hi - lo if hi > lo else torch.ones((), dtype=torch.float64)
    return (0.15 + 0.7 * (up - lo) / span).to(torch.float32)


def load_carrier_image(path, size: int) -> torch.Tensor:
    """One carrier from disk (PNG/JPEG via Pillow, or TTWM), resized, channel-last."""
    path = Path(path)
    if path.suffix == ".ttwm":
        arr = read_ttwm(path)
        if arr.ndim == 2:
            arr = np.repeat(arr[..., None], 3, axis=2)
        t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
        if t.shape[:2] != (size, size):
            t = torch.nn.functional.interpolate(
                t.permute(2, 0, 1).unsqueeze(0), size=(size, size),
                mode="bilinear", align_corners=False)[0].permute(1, 2, 0)
        return t.clamp(0.0, 1.0)
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB").resize((size, size), Image.BILINEAR)
        return torch.from_numpy(np.asarray(im, dtype=np.float32) / 255.0)


class CarrierSource:
    """Deterministic per-(step, sample) carriers: disk images or smooth noise."""

    def __init__(self, cfg: CodecConfig):
        self.size = cfg.size
        self.paths = None
        if cfg.dataset_dir is not None:
            exts = (".png", ".jpg", ".jpeg", ".ttwm")
            self.paths = sorted(p for p in Path(cfg.dataset_dir).iterdir()
                                if p.suffix.lower() in exts)
            if not self.paths:
                raise FormatError(f"no carrier images under {cfg.dataset_dir}")

    def get(self, seed) -> torch.Tensor:
        if self.paths is None:
            return smooth_carrier(self.size, seed)
        rng = np.random.default_rng(seed)
        return load_carrier_image(self.paths[int(rng.integers(0, len(self.paths)))],
                                  self.size)


def load_references(cfg: CodecConfig) -> dict:
    """The reference watermark bundle as float32 channel-last torch tensors."""
    if cfg.refs_manifest is None:
        raise FormatError("config needs refs_manifest: the reference watermark "
                          "bundle written by the toolkit")
    refs = load_bundle(cfg.refs_manifest)
    if refs["sem"].shape[:2] != (cfg.size, cfg.size):
        raise FormatError(f"reference bundle is {refs['sem'].shape[:2]}, "
                          f"config wants {(cfg.size, cfg.size)}")
    return {name: torch.from_numpy(np.ascontiguousarray(refs[name], dtype=np.float32))
            for name in ("sem", "pho", "geo")}


# ---------------------------------------------------------------------------
# Losses and evaluation helpers
# ---------------------------------------------------------------------------

def encoding_loss(x_w: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Per-sample mean-abs plus max-abs deviation, averaged over the batch."""
    diff = (x_w - x).abs().flatten(1)
    return (diff.mean(dim=1) + diff.amax(dim=1)).mean()


def decoding_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Sum over watermark types of the mean-abs deviation (packed channels:
    sem, pho·3, geo), averaged over the batch."""
    diff = (pred - target).abs()
    sem = diff[:, 0].flatten(1).mean(dim=1)
    pho = diff[:, 1:4].flatten(1).mean(dim=1)
    geo = diff[:, 4].flatten(1).mean(dim=1)
    return (sem + pho + geo).mean()


def mae(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).abs().mean())


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    mse = float(((a - b) ** 2).mean())
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def moving_average(log, upto: int, window: int = 100) -> float:
    """Mean of the `window` losses ending at step `upto` (1-based, inclusive)."""
    if not 0 < upto <= len(log):
        raise ValueError(f"upto must be in 1..{len(log)}, got {upto}")
    return float(np.mean(log[max(0, upto - window):upto]))


def lpips_distance(a: torch.Tensor, b: torch.Tensor):
    """Optional LPIPS metric; needs the `lpips` package installed."""
    try:
        import lpips  # noqa: PLC0415
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise RuntimeError("LPIPS evaluation needs the optional 'lpips' package") from exc
    net = lpips.LPIPS(net="alex", verbose=False)
    to_nchw = lambda t: (t.permute(2, 0, 1) if t.ndim == 3 else t).unsqueeze(0) * 2 - 1
    with torch.no_grad():
        return float(net(to_nchw(a), to_nchw(b)))


# ---------------------------------------------------------------------------
# The training loop
# ---------------------------------------------------------------------------

def _simulate(x_w: torch.Tensor, refs: dict, chains: list) -> tuple:
    """Push each marked sample through its chain; stack targets alongside."""
    transformed, targets = [], []
    for i, chain in enumerate(chains):
        hwc = x_w[i].permute(1, 2, 0)
        out = chainlayer.apply_chain(hwc, chain)
        transformed.append(out.permute(2, 0, 1))
        with torch.no_grad():
            t = chainlayer.watermark_targets(refs, chain)
        targets.append(pack_watermarks(t["sem"], t["pho"], t["geo"]))
    return torch.stack(transformed), torch.stack(targets)


def train(cfg: CodecConfig, out_dir) -> TrainResult:
    """Run the joint loop; writes checkpoint.pt and loss_log.json to out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    device = torch.device(cfg.device)

    refs = {k: v.to(device) for k, v in load_references(cfg).items()}
    wpack = pack_watermarks(refs["sem"], refs["pho"], refs["geo"])
    carriers = CarrierSource(cfg)
    ranges = cfg.resolved_ranges()

    torch.manual_seed(cfg.seed)
    encoder = Encoder(cfg.base_channels, cfg.residual_amp).to(device)
    decoder = Decoder(cfg.base_channels, cfg.size, conditioning=wpack).to(device)
    if cfg.init_from is not None:
        warm = torch.load(Path(cfg.init_from), map_location=device, weights_only=False)
        encoder.load_state_dict(warm["encoder"])
        decoder.load_state_dict(warm["decoder"])
    optimizer = torch.optim.Adam(
        list(encoder.parameters()) + list(decoder.parameters()), lr=cfg.lr)
    scheduler = None
    if cfg.steps and (cfg.lr_warmup or cfg.lr_schedule == "cosine"):
        warm_steps = min(cfg.lr_warmup, cfg.steps)
        span = max(1, cfg.steps - warm_steps)

        def lr_factor(t, warm=warm_steps, span=span, kind=cfg.lr_schedule):
            if t < warm:
                return (t + 1) / warm
            if kind == "constant":
                return 1.0
            return 0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * (t - warm) / span))

        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_factor)

    loss_log = []
    for step in range(1, cfg.steps + 1):
        xs, chains = [], []
        for i in range(cfg.batch_size):
            xs.append(carriers.get(np.random.SeedSequence([cfg.seed, step, i, 0])))
            family = cfg.chain_family
            if family == "mixed":
                pick = np.random.default_rng(np.random.SeedSequence([cfg.seed, step, i, 2]))
                family = FAMILY_NAMES[int(pick.integers(len(FAMILY_NAMES)))]
            chains.append(sample_chain_json(
                family, ranges=ranges,
                seed=np.random.SeedSequence([cfg.seed, step, i, 1]),
                custom_active=cfg.custom_active))
        x = torch.stack([c.permute(2, 0, 1) for c in xs]).to(device)
        w = wpack.unsqueeze(0).expand(cfg.batch_size, -1, -1, -1)

        x_w = encoder(x, w)
        x_t, targets = _simulate(x_w, refs, chains)
        pred = decoder(x_t)

        ew = cfg.encode_weight
        if cfg.encode_ramp:
            ew *= min(1.0, step / cfg.encode_ramp)
        loss = (ew * encoding_loss(x_w, x)
                + cfg.decode_weight * decoding_loss(pred, targets))
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if scheduler is not None:
            scheduler.step()
        loss_log.append(float(loss.detach()))

    checkpoint = out_dir / "checkpoint.pt"
    torch.save({
        "config": {**asdict(cfg), "ranges": ranges,
                   "custom_active": list(cfg.custom_active)},
        "encoder": encoder.state_dict(),
        "decoder": decoder.state_dict(),
        "refs": {k: v.cpu().numpy() for k, v in refs.items()},
        "loss_log": loss_log,
        "steps": cfg.steps,
    }, checkpoint)
    (out_dir / "loss_log.json").write_text(
        json.dumps({"loss": loss_log}, indent=2) + "\n")
    return TrainResult(checkpoint=checkpoint, loss_log=loss_log)


def load_checkpoint(path) -> tuple:
    """(encoder, decoder, payload) from a checkpoint written by train()."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    cfg = payload["config"]
    encoder = Encoder(cfg["base_channels"], cfg["residual_amp"])
    decoder = Decoder(cfg["base_channels"], cfg["size"])
    encoder.load_state_dict(payload["encoder"])
    decoder.load_state_dict(payload["decoder"])
    encoder.eval()
    decoder.eval()
    return encoder, decoder, payload
