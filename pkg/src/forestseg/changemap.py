"""Deforestation maps from two dated classifications, area estimation and
overlay rendering.

A pixel's change state is a pure function of its (t0, t1) label pair:
forest->non-forest is deforestation, the reverse is afforestation. Areas come
from pixel counts scaled by the flat pixel footprint, computed in exact
rational arithmetic before the final float conversion.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import DataError
from .grids import BinaryMask, GeoGrid, RasterChip
from .tileio import write_npz_deterministic


class ChangeState(IntEnum):
    STABLE_NONFOREST = 0
    STABLE_FOREST = 1
    DEFORESTED = 2
    AFFORESTED = 3


# state = _STATE_LUT[2*t0 + t1]
_STATE_LUT = np.array(
    [
        ChangeState.STABLE_NONFOREST,
        ChangeState.AFFORESTED,
        ChangeState.DEFORESTED,
        ChangeState.STABLE_FOREST,
    ],
    dtype=np.uint8,
)


@dataclass(frozen=True, eq=False)
class ChangeMap:
    grid: GeoGrid
    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states)
        object.__setattr__(self, "states", states)
        if states.shape != self.grid.shape:
            raise DataError(
                f"states {states.shape} do not match grid {self.grid.shape}"
            )
        if not np.isin(states, (0, 1, 2, 3)).all():
            raise DataError("change states must be codes 0..3")

    def count(self, state: ChangeState) -> int:
        return int((self.states == state).sum())


def detect_change(t0: BinaryMask, t1: BinaryMask) -> ChangeMap:
    """Per-pixel comparison of two dated forest masks on one grid."""
    if t0.grid != t1.grid:
        raise DataError("change detection needs both masks on the same grid")
    idx = t0.labels.astype(np.uint8) * 2 + t1.labels.astype(np.uint8)
    return ChangeMap(grid=t0.grid, states=_STATE_LUT[idx])


@dataclass(frozen=True)
class AreaEstimate:
    """Counts plus km^2 conversions for one or more change maps. The km^2
    values are exact rationals converted to float once."""

    deforested_px: int
    afforested_px: int
    forest_t0_px: int
    pixel_size_m: float

    @property
    def _px_km2(self) -> Fraction:
        ps = Fraction(self.pixel_size_m)
        return ps * ps / Fraction(10**6)

    @property
    def deforested_km2(self) -> float:
        return float(self.deforested_px * self._px_km2)

    @property
    def afforested_km2(self) -> float:
        return float(self.afforested_px * self._px_km2)

    @property
    def forest_t0_km2(self) -> float:
        return float(self.forest_t0_px * self._px_km2)

    @property
    def rate_defined(self) -> bool:
        return self.forest_t0_px > 0

    @property
    def deforestation_rate(self) -> float | None:
        if not self.rate_defined:
            return None
        return float(Fraction(self.deforested_px, self.forest_t0_px))

    def __add__(self, other: "AreaEstimate") -> "AreaEstimate":
        if self.pixel_size_m != other.pixel_size_m:
            raise DataError("cannot merge area estimates at different resolutions")
        return AreaEstimate(
            self.deforested_px + other.deforested_px,
            self.afforested_px + other.afforested_px,
            self.forest_t0_px + other.forest_t0_px,
            self.pixel_size_m,
        )

    def to_dict(self) -> dict:
        return {
            "deforested_px": self.deforested_px,
            "afforested_px": self.afforested_px,
            "forest_t0_px": self.forest_t0_px,
            "pixel_size_m": self.pixel_size_m,
            "deforested_km2": self.deforested_km2,
            "afforested_km2": self.afforested_km2,
            "forest_t0_km2": self.forest_t0_km2,
            "deforestation_rate": self.deforestation_rate,
        }


def area_estimate(change: ChangeMap) -> AreaEstimate:
    deforested = change.count(ChangeState.DEFORESTED)
    stable_forest = change.count(ChangeState.STABLE_FOREST)
    return AreaEstimate(
        deforested_px=deforested,
        afforested_px=change.count(ChangeState.AFFORESTED),
        forest_t0_px=stable_forest + deforested,
        pixel_size_m=change.grid.pixel_size_m,
    )


def write_change_raster(path, change: ChangeMap) -> None:
    """Single-band raster of state codes 0..3 in the tile container format."""
    write_npz_deterministic(
        path,
        {
            "states": change.states.astype(np.uint8),
            "lon": np.array([change.grid.lon_min, change.grid.lon_max]),
            "lat": np.array([change.grid.lat_min, change.grid.lat_max]),
            "pixel_size_m": np.float64(change.grid.pixel_size_m),
        },
    )


def read_change_raster(path) -> ChangeMap:
    with np.load(path) as data:
        states = data["states"]
        lon, lat = data["lon"], data["lat"]
        grid = GeoGrid(
            lon_min=float(lon[0]),
            lon_max=float(lon[1]),
            lat_min=float(lat[0]),
            lat_max=float(lat[1]),
            pixel_size_m=float(data["pixel_size_m"]),
            width_px=states.shape[1],
            height_px=states.shape[0],
        )
    return ChangeMap(grid=grid, states=states)


@dataclass(frozen=True)
class OverlayStyle:
    deforested_color: tuple[int, int, int] = (220, 30, 30)
    afforested_color: tuple[int, int, int] | None = None
    alpha: float = 0.85
    legend: bool = True


def _base_composite(base: RasterChip) -> np.ndarray:
    """Stretch the base chip to an (H, W, 3) uint8 image: RGB when the
    optical bands are present, first-band grayscale otherwise."""
    if all(b in base.band_names for b in ("B4", "B3", "B2")):
        planes = [base.band(b) for b in ("B4", "B3", "B2")]
    else:
        planes = [base.bands[:, :, 0]] * 3
    out = np.empty((*base.grid.shape, 3), dtype=np.uint8)
    for i, plane in enumerate(planes):
        lo, hi = np.percentile(plane, [2.0, 98.0])
        if hi <= lo:
            out[:, :, i] = 0
        else:
            out[:, :, i] = (np.clip((plane - lo) / (hi - lo), 0.0, 1.0) * 255).astype(
                np.uint8
            )
    return out


def render_overlay(
    base: RasterChip, change: ChangeMap, style: OverlayStyle = OverlayStyle()
) -> Image.Image:
    """Tint changed pixels over a composite of the base imagery."""
    if base.grid != change.grid:
        raise DataError("overlay base and change map must share one grid")
    img = _base_composite(base).astype(np.float64)
    layers = [(ChangeState.DEFORESTED, style.deforested_color)]
    if style.afforested_color is not None:
        layers.append((ChangeState.AFFORESTED, style.afforested_color))
    for state, color in layers:
        sel = change.states == state
        img[sel] = (1.0 - style.alpha) * img[sel] + style.alpha * np.array(color)
    image = Image.fromarray(img.round().astype(np.uint8))
    if style.legend:
        draw = ImageDraw.Draw(image)
        entries = [("deforested", style.deforested_color)]
        if style.afforested_color is not None:
            entries.append(("afforested", style.afforested_color))
        pad, sw = 3, 8
        box_h = pad * 2 + len(entries) * (sw + 3)
        box_w = pad * 2 + sw + 4 + 62
        draw.rectangle([0, 0, box_w, box_h], fill=(255, 255, 255))
        for i, (label, color) in enumerate(entries):
            y = pad + i * (sw + 3)
            draw.rectangle([pad, y, pad + sw, y + sw], fill=color)
            draw.text((pad + sw + 4, y - 1), label, fill=(0, 0, 0))
    return image


def save_overlay(path, base: RasterChip, change: ChangeMap,
                 style: OverlayStyle = OverlayStyle()) -> None:
    """Render and save as PNG; identical inputs produce identical bytes."""
    image = render_overlay(base, change, style)
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(buf.getvalue())
