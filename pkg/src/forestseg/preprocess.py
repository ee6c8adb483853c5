"""Percentile normalization, dataset splitting and paired augmentation.

Normalization follows the inverted percentile min-max used for the satellite
inputs: x -> (p99 - x) / (p99 - p1), clipped to [0, 1]. The orientation knob
is kept because the printed form reverses value order; ``standard`` flips it
to (x - p1) / (p99 - p1). Percentiles use linear interpolation between order
statistics and are fit on the training split only.

Augmentation draws one geometric transform per sample (flips, sub-pixel
shifts up to 10% of the tile, rotations up to +/-180 deg) and applies it
identically to every feature channel (bilinear) and to the mask (nearest
neighbor, so labels stay binary). Out-of-frame regions replicate the nearest
edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DataError
from .grids import BinaryMask, RasterChip

ORIENTATIONS = ("as_printed", "standard")


@dataclass(frozen=True)
class NormalizationStats:
    """Per-band 1st/99th percentiles of the training distribution."""

    bands: dict[str, tuple[float, float]]
    orientation: str = "as_printed"

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ConfigurationError(
                f"orientation must be one of {ORIENTATIONS}, got {self.orientation!r}"
            )
        for name, (p1, p99) in self.bands.items():
            if not p99 > p1:
                raise DataError(
                    f"band {name!r} is degenerate: p99 ({p99}) must exceed p1 ({p1})"
                )

    def to_dict(self) -> dict:
        return {
            "orientation": self.orientation,
            "bands": {k: {"p1": v[0], "p99": v[1]} for k, v in self.bands.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            bands={k: (v["p1"], v["p99"]) for k, v in d["bands"].items()},
            orientation=d.get("orientation", "as_printed"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "NormalizationStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_percentiles(chips, orientation: str = "as_printed") -> NormalizationStats:
    """Pool every pixel of the given training chips and take per-band
    percentiles. Chips must share a band list; constant bands are rejected."""
    pools: dict[str, list[np.ndarray]] = {}
    names = None
    count = 0
    for chip in chips:
        count += 1
        if names is None:
            names = chip.band_names
        elif chip.band_names != names:
            raise DataError(
                f"inconsistent band lists: {chip.band_names} vs {names}"
            )
        for i, name in enumerate(names):
            pools.setdefault(name, []).append(chip.bands[:, :, i].ravel())
    if count == 0:
        raise DataError("cannot fit percentiles on an empty chip stream")
    bands = {}
    for name in names:
        values = np.concatenate(pools[name])
        p1, p99 = np.percentile(values, [1.0, 99.0])
        if not p99 > p1:
            raise DataError(
                f"band {name!r} is (near-)constant over the training split; "
                "cannot derive a percentile range"
            )
        bands[name] = (float(p1), float(p99))
    return NormalizationStats(bands=bands, orientation=orientation)


def normalize_bands(
    bands: np.ndarray, band_names, stats: NormalizationStats
) -> np.ndarray:
    """Array-level normalization of an (H, W, C) stack; clips to [0, 1]."""
    out = np.empty_like(bands, dtype=np.float32)
    for i, name in enumerate(band_names):
        if name not in stats.bands:
            raise DataError(f"band {name!r} has no normalization stats")
        p1, p99 = stats.bands[name]
        x = bands[:, :, i]
        if stats.orientation == "as_printed":
            v = (p99 - x) / (p99 - p1)
        else:
            v = (x - p1) / (p99 - p1)
        out[:, :, i] = np.clip(v, 0.0, 1.0)
    return out


def percentile_normalize(chip: RasterChip, stats: NormalizationStats) -> RasterChip:
    return RasterChip(
        grid=chip.grid,
        bands=normalize_bands(chip.bands, chip.band_names, stats),
        band_names=chip.band_names,
    )


@dataclass(frozen=True)
class SplitAssignment:
    assignment: dict[str, str]
    ratios: tuple[float, float, float]
    seed: int

    def tiles(self, split: str) -> list[str]:
        return sorted(t for t, s in self.assignment.items() if s == split)


def split_tile_ids(
    tile_ids, ratios=(0.70, 0.15, 0.15), seed: int = 0
) -> SplitAssignment:
    """Seeded shuffle, then contiguous train/val/test partition.

    Counts are floor(train ratio), floor(val ratio), remainder test; the
    result is deterministic for a given (tile id set, seed).
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigurationError(f"need three non-negative ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"ratios must sum to 1, got {sum(ratios)}")
    ids = sorted(set(tile_ids))
    if len(ids) < 3:
        raise DataError(f"need at least 3 tiles to split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(ids)))
    n = len(ids)
    n_train = math.floor(ratios[0] * n)
    n_val = math.floor(ratios[1] * n)
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            split = "train"
        elif rank < n_train + n_val:
            split = "val"
        else:
            split = "test"
        assignment[ids[idx]] = split
    return SplitAssignment(assignment=assignment, ratios=ratios, seed=seed)


@dataclass(frozen=True)
class AugmentationPolicy:
    flip_h: bool = True
    flip_v: bool = True
    max_shift_fraction: float = 0.10
    max_rotation_deg: float = 180.0
    fill: str = "nearest"

    def __post_init__(self):
        if not 0.0 <= self.max_shift_fraction <= 0.10:
            raise ConfigurationError(
                f"max_shift_fraction must lie in [0, 0.10], got {self.max_shift_fraction}"
            )
        if not 0.0 <= self.max_rotation_deg <= 180.0:
            raise ConfigurationError(
                f"max_rotation_deg must lie in [0, 180], got {self.max_rotation_deg}"
            )
        if self.fill != "nearest":
            raise ConfigurationError("only nearest-edge fill is supported")

    @classmethod
    def disabled(cls) -> "AugmentationPolicy":
        return cls(flip_h=False, flip_v=False, max_shift_fraction=0.0, max_rotation_deg=0.0)


@dataclass(frozen=True)
class AugmentDraw:
    """One sampled geometric transform, shared by features and mask."""

    flip_h: bool = False
    flip_v: bool = False
    shift_rows: float = 0.0
    shift_cols: float = 0.0
    angle_deg: float = 0.0

    @property
    def is_identity(self) -> bool:
        return not (
            self.flip_h
            or self.flip_v
            or self.shift_rows
            or self.shift_cols
            or self.angle_deg
        )


def draw_augment(
    policy: AugmentationPolicy, rng: np.random.Generator, shape: tuple[int, int]
) -> AugmentDraw:
    h, w = shape
    flip_h = policy.flip_h and bool(rng.random() < 0.5)
    flip_v = policy.flip_v and bool(rng.random() < 0.5)
    sr = sc = 0.0
    if policy.max_shift_fraction > 0:
        sr = float(rng.uniform(-policy.max_shift_fraction, policy.max_shift_fraction) * h)
        sc = float(rng.uniform(-policy.max_shift_fraction, policy.max_shift_fraction) * w)
    angle = 0.0
    if policy.max_rotation_deg > 0:
        angle = float(rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg))
    return AugmentDraw(flip_h, flip_v, sr, sc, angle)


def _affine_parts(draw: AugmentDraw, shape: tuple[int, int]):
    """Inverse mapping (matrix, offset) for scipy's affine_transform in
    (row, col) coordinates: forward = shift(rotate(flip(p - c))) + c."""
    theta = math.radians(draw.angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rot_inv = np.array([[cos_t, -sin_t], [sin_t, cos_t]]).T
    flip = np.diag(
        [-1.0 if draw.flip_v else 1.0, -1.0 if draw.flip_h else 1.0]
    )
    matrix = flip @ rot_inv
    center = (np.array(shape, dtype=float) - 1.0) / 2.0
    shift = np.array([draw.shift_rows, draw.shift_cols])
    offset = center - matrix @ (center + shift)
    return matrix, offset


def transform_plane(plane: np.ndarray, draw: AugmentDraw, order: int) -> np.ndarray:
    """Apply a draw to one 2-D plane. order=0 keeps label sets intact."""
    if draw.is_identity:
        return plane.copy()
    matrix, offset = _affine_parts(draw, plane.shape)
    return ndimage.affine_transform(
        plane, matrix, offset=offset, order=order, mode="nearest", prefilter=False
    )


def apply_draw(
    features: np.ndarray, mask: np.ndarray, draw: AugmentDraw
) -> tuple[np.ndarray, np.ndarray]:
    out_f = np.empty_like(features)
    for c in range(features.shape[2]):
        out_f[:, :, c] = transform_plane(features[:, :, c], draw, order=1)
    out_m = transform_plane(mask, draw, order=0)
    return out_f, out_m


def augment(
    features: RasterChip,
    mask: BinaryMask,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
) -> tuple[RasterChip, BinaryMask]:
    """Draw one transform and apply it to both tensors of a training pair."""
    if features.bands.shape[:2] != mask.labels.shape:
        raise DataError(
            f"feature dims {features.bands.shape[:2]} do not match mask "
            f"{mask.labels.shape}"
        )
    draw = draw_augment(policy, rng, mask.labels.shape)
    out_f, out_m = apply_draw(features.bands, mask.labels, draw)
    return (
        replace(features, bands=out_f),
        replace(mask, labels=out_m),
    )
