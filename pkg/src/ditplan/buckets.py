"""Bucketed dataset geometry: latent shapes, token counts, bucket assignment.

A bucket is a ``{batch, frames, height, width}`` quadruple. Buckets are
chosen so that different shape classes carry (near-)equal token counts
per batch and can run side by side under plain data parallelism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import ModelArch
from .errors import ConfigError, DimensionError, SampleTooShortError


@dataclass(frozen=True)
class VaeSpec:
    """Causal video VAE compression: 1 + T/temporal_ratio frames,
    height/width divided by spatial_ratio."""

    temporal_ratio: int = 4
    spatial_ratio: int = 8
    latent_channels: int = 8

    def __post_init__(self):
        if self.temporal_ratio < 1 or self.spatial_ratio < 1:
            raise ConfigError("compression ratios must be >= 1", "vae")
        if self.latent_channels < 1:
            raise ConfigError("latent_channels must be >= 1", "vae.latent_channels")


@dataclass(frozen=True)
class Bucket:
    """One shape class of training samples."""

    batch: int
    frames: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("batch", "frames", "height", "width"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", f"bucket.{name}")

    def key(self) -> tuple[int, int, int, int]:
        return (self.batch, self.frames, self.height, self.width)

    def label(self) -> str:
        return f"{{{self.batch},{self.frames},{self.height},{self.width}}}"


@dataclass(frozen=True)
class LatentShape:
    """Latent geometry of one sample plus its post-patchify token counts."""

    t_lat: int
    h_lat: int
    w_lat: int
    tokens: int
    tokens_batch: int


def latent_shape(frames: int, height: int, width: int, vae: VaeSpec = VaeSpec()) -> tuple[int, int, int]:
    """Pre-patchify latent dims of a (frames, height, width) video.

    The leading frame is kept whole, the remaining frames compress by
    ``temporal_ratio``; spatial dims must divide by ``spatial_ratio``.
    """
    if frames < 1:
        raise DimensionError("frames must be >= 1", "frames")
    if (frames - 1) % vae.temporal_ratio != 0:
        raise DimensionError(
            f"frames-1 must be divisible by the temporal ratio {vae.temporal_ratio}", "frames"
        )
    if height % vae.spatial_ratio != 0:
        raise DimensionError(
            f"height {height} not divisible by spatial ratio {vae.spatial_ratio}", "height"
        )
    if width % vae.spatial_ratio != 0:
        raise DimensionError(
            f"width {width} not divisible by spatial ratio {vae.spatial_ratio}", "width"
        )
    t_lat = 1 + (frames - 1) // vae.temporal_ratio
    return (t_lat, height // vae.spatial_ratio, width // vae.spatial_ratio)


def token_count(bucket: Bucket, vae: VaeSpec = VaeSpec(), arch: ModelArch | None = None) -> LatentShape:
    """Tokens per sample (post-patchify, ceiling division) and per batch."""
    patch = (arch.patch_t, arch.patch_h, arch.patch_w) if arch is not None else (1, 2, 2)
    t_lat, h_lat, w_lat = latent_shape(bucket.frames, bucket.height, bucket.width, vae)
    tokens = (
        math.ceil(t_lat / patch[0]) * math.ceil(h_lat / patch[1]) * math.ceil(w_lat / patch[2])
    )
    return LatentShape(
        t_lat=t_lat, h_lat=h_lat, w_lat=w_lat, tokens=tokens, tokens_batch=bucket.batch * tokens
    )


def snap_to_multiple(value: int, multiple: int) -> int:
    """Round to the nearest positive multiple (ties round up)."""
    snapped = int(multiple * math.floor(value / multiple + 0.5))
    return max(multiple, snapped)


def snap_bucket(bucket: Bucket, vae: VaeSpec = VaeSpec(), arch: ModelArch | None = None) -> Bucket:
    """Round bucket height/width to the nearest VAE-and-patch-compatible size.

    Published bucket lists include entries such as 480x854 that no 8x
    spatial VAE plus 2x2 patchify can ingest directly; real pipelines
    snap them (854 -> 848 with the default 16-pixel grain).
    """
    patch_h = arch.patch_h if arch is not None else 2
    patch_w = arch.patch_w if arch is not None else 2
    grain_h = vae.spatial_ratio * patch_h
    grain_w = vae.spatial_ratio * patch_w
    height = snap_to_multiple(bucket.height, grain_h)
    width = snap_to_multiple(bucket.width, grain_w)
    if (height, width) == (bucket.height, bucket.width):
        return bucket
    return Bucket(bucket.batch, bucket.frames, height, width)


@dataclass(frozen=True)
class BucketTransform:
    """How a sample maps onto its assigned bucket (description only)."""

    temporal_crop_to: int
    resize_to: tuple[int, int]

    def is_identity_for(self, sample_dims: tuple[int, int, int]) -> bool:
        frames, height, width = sample_dims
        return self.temporal_crop_to == frames and self.resize_to == (height, width)


def assign_bucket(
    sample_dims: tuple[int, int, int], buckets: list[Bucket] | tuple[Bucket, ...]
) -> tuple[Bucket, BucketTransform]:
    """Pick the bucket a (frames, height, width) sample trains under.

    The largest bucket frame length not exceeding the sample's is chosen
    (so a temporal random crop is possible), then the bucket at that
    frame length whose pixel area is closest to the sample's.
    """
    if not buckets:
        raise ConfigError("bucket list is empty", "buckets")
    frames, height, width = sample_dims
    eligible = [b for b in buckets if b.frames <= frames]
    if not eligible:
        raise SampleTooShortError(
            f"sample too short: {frames} frames, shortest bucket needs "
            f"{min(b.frames for b in buckets)}"
        )
    best_frames = max(b.frames for b in eligible)
    area = height * width
    at_length = [b for b in eligible if b.frames == best_frames]
    chosen = min(
        at_length, key=lambda b: (abs(b.height * b.width - area), b.height * b.width, b.key())
    )
    return chosen, BucketTransform(
        temporal_crop_to=chosen.frames, resize_to=(chosen.height, chosen.width)
    )


@dataclass(frozen=True)
class BucketBalanceEntry:
    bucket: Bucket
    snapped: Bucket
    tokens: int
    tokens_batch: int


@dataclass(frozen=True)
class BucketBalanceReport:
    """Per-bucket token totals plus the worst pairwise relative deviation."""

    entries: tuple[BucketBalanceEntry, ...]
    tolerance: float
    max_deviation: float
    flagged: tuple[tuple[str, str, float], ...]

    @property
    def balanced(self) -> bool:
        return not self.flagged


def check_token_balance(
    buckets: list[Bucket] | tuple[Bucket, ...],
    tolerance: float = 0.01,
    vae: VaeSpec = VaeSpec(),
    arch: ModelArch | None = None,
    snap_nondivisible: bool = True,
) -> BucketBalanceReport:
    """Flag bucket pairs whose per-batch token counts diverge beyond tolerance.

    Relative deviation of a pair is |a-b| / min(a,b). Non-divisible
    spatial dims are snapped to the nearest compatible size first (the
    snapped shape is reported next to the original).
    """
    entries = []
    for bucket in buckets:
        snapped = snap_bucket(bucket, vae, arch) if snap_nondivisible else bucket
        shape = token_count(snapped, vae, arch)
        entries.append(
            BucketBalanceEntry(
                bucket=bucket, snapped=snapped, tokens=shape.tokens, tokens_batch=shape.tokens_batch
            )
        )
    flagged = []
    max_dev = 0.0
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            a, b = entries[i].tokens_batch, entries[j].tokens_batch
            dev = abs(a - b) / min(a, b)
            max_dev = max(max_dev, dev)
            if dev > tolerance:
                flagged.append((entries[i].bucket.label(), entries[j].bucket.label(), dev))
    return BucketBalanceReport(
        entries=tuple(entries),
        tolerance=tolerance,
        max_deviation=max_dev,
        flagged=tuple(flagged),
    )
