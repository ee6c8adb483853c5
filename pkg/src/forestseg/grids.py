"""Geospatial grid arithmetic, tiling, label remapping and resampling.

Everything here is pure and in-memory: types are frozen dataclasses wrapping
NumPy arrays, operations return new objects and never mutate their inputs, so
all of it is safe to call from parallel tile workers.

Pixels are treated as flat squares of ``pixel_size_m`` metres on a side;
map-projection effects are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError

FOREST = 1
NON_FOREST = 0

# Native forest/non-forest product codes, in the product's listing order.
FNF_DENSE_FOREST = 1
FNF_NONDENSE_FOREST = 2
FNF_NONFOREST = 3
FNF_WATER = 4
FNF_FOREST_CODES = (FNF_DENSE_FOREST, FNF_NONDENSE_FOREST)
FNF_NONFOREST_CODES = (FNF_NONFOREST, FNF_WATER)


@dataclass(frozen=True)
class GeoGrid:
    """Footprint and sampling of a raster: lon/lat bounds in degrees, ground
    sample distance in metres, and pixel counts."""

    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float
    pixel_size_m: float
    width_px: int
    height_px: int

    def __post_init__(self):
        if not self.lon_min < self.lon_max:
            raise DataError(f"lon_min {self.lon_min} must be < lon_max {self.lon_max}")
        if not self.lat_min < self.lat_max:
            raise DataError(f"lat_min {self.lat_min} must be < lat_max {self.lat_max}")
        if self.pixel_size_m <= 0:
            raise DataError(f"pixel_size_m must be positive, got {self.pixel_size_m}")
        if self.width_px < 1 or self.height_px < 1:
            raise DataError(
                f"pixel counts must be >= 1, got {self.width_px}x{self.height_px}"
            )

    @property
    def pixel_area_m2(self) -> float:
        return self.pixel_size_m * self.pixel_size_m

    @property
    def area_km2(self) -> float:
        return self.width_px * self.height_px * self.pixel_area_m2 * 1e-6

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)


@dataclass(frozen=True, eq=False)
class RasterChip:
    """A (H, W, C) stack of band values over one grid footprint."""

    grid: GeoGrid
    bands: np.ndarray
    band_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "band_names", tuple(self.band_names))
        bands = np.asarray(self.bands)
        object.__setattr__(self, "bands", bands)
        if bands.ndim != 3:
            raise DataError(f"bands must be (H, W, C), got shape {bands.shape}")
        expected = (self.grid.height_px, self.grid.width_px, len(self.band_names))
        if bands.shape != expected:
            raise DataError(f"band array {bands.shape} does not match grid {expected}")
        if len(set(self.band_names)) != len(self.band_names):
            raise DataError(f"duplicate band names in {self.band_names}")

    def band(self, name: str) -> np.ndarray:
        if name not in self.band_names:
            raise DataError(f"band {name!r} not present in {self.band_names}")
        return self.bands[:, :, self.band_names.index(name)]


def _check_labels(labels, allowed, kind):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DataError(f"{kind} labels must be 2-D, got shape {labels.shape}")
    bad = ~np.isin(labels, allowed)
    if bad.any():
        idx = tuple(int(v) for v in np.argwhere(bad)[0])
        raise DataError(
            f"{kind} contains invalid code {labels[idx]} at pixel {idx}; "
            f"allowed codes are {sorted(allowed)}"
        )
    return labels


@dataclass(frozen=True, eq=False)
class FNF4Mask:
    """Four-class forest product tile: codes 1..4 = dense forest, non-dense
    forest, non-forest, water."""

    grid: GeoGrid
    labels: np.ndarray
    codes: tuple[int, int, int, int] = (1, 2, 3, 4)

    def __post_init__(self):
        object.__setattr__(self, "codes", tuple(self.codes))
        labels = _check_labels(self.labels, list(self.codes), "FNF4Mask")
        object.__setattr__(self, "labels", labels)
        if labels.shape != self.grid.shape:
            raise DataError(f"labels {labels.shape} do not match grid {self.grid.shape}")


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Forest(1)/non-forest(0) tile; forest is the positive class."""

    grid: GeoGrid
    labels: np.ndarray

    def __post_init__(self):
        labels = _check_labels(self.labels, [0, 1], "BinaryMask")
        object.__setattr__(self, "labels", labels)
        if labels.shape != self.grid.shape:
            raise DataError(f"labels {labels.shape} do not match grid {self.grid.shape}")

    @property
    def forest_pixels(self) -> int:
        return int(self.labels.sum())


@dataclass(frozen=True)
class TileFrame:
    """Position of one tile inside a mosaic."""

    tile_id: str
    row: int
    col: int
    grid: GeoGrid


def remap_fnf(mask: FNF4Mask) -> BinaryMask:
    """Consolidate the four product classes into forest/non-forest.

    The two forest classes (codes[0], codes[1]) map to 1; non-forest and
    water map to 0. Label validity is already guaranteed by FNF4Mask.
    """
    forest = np.isin(mask.labels, mask.codes[:2])
    return BinaryMask(grid=mask.grid, labels=forest.astype(np.uint8))


def _scaled_grid(grid: GeoGrid, height_px: int, width_px: int) -> GeoGrid:
    scale = grid.height_px / height_px
    return replace(
        grid,
        pixel_size_m=grid.pixel_size_m * scale,
        width_px=width_px,
        height_px=height_px,
    )


def resample_nearest(mask: BinaryMask, target_pixel_size_m: float) -> BinaryMask:
    """Nearest-neighbor resample onto a grid with the requested ground sample
    distance (e.g. a coarse 25 m product onto 10 m imagery).

    Output pixel (i, j) copies the source pixel containing its centre.
    """
    if target_pixel_size_m <= 0:
        raise DataError(f"target pixel size must be positive, got {target_pixel_size_m}")
    ratio = mask.grid.pixel_size_m / target_pixel_size_m
    out_h = int(round(mask.grid.height_px * ratio))
    out_w = int(round(mask.grid.width_px * ratio))
    if out_h < 1 or out_w < 1:
        raise DataError("target resolution collapses the mask to zero pixels")
    src_rows = np.minimum(
        (np.floor((np.arange(out_h) + 0.5) / ratio)).astype(np.int64),
        mask.grid.height_px - 1,
    )
    src_cols = np.minimum(
        (np.floor((np.arange(out_w) + 0.5) / ratio)).astype(np.int64),
        mask.grid.width_px - 1,
    )
    labels = mask.labels[np.ix_(src_rows, src_cols)]
    return BinaryMask(grid=_scaled_grid(mask.grid, out_h, out_w), labels=labels)


def upsample_nearest(mask: BinaryMask, factor: int) -> BinaryMask:
    """Integer-factor nearest-neighbor upsampling (each pixel becomes a
    factor x factor block). Preserves the forest-pixel fraction exactly."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise DataError(f"upsampling factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return mask
    labels = np.repeat(np.repeat(mask.labels, factor, axis=0), factor, axis=1)
    grid = _scaled_grid(
        mask.grid, mask.grid.height_px * factor, mask.grid.width_px * factor
    )
    return BinaryMask(grid=grid, labels=labels)


def tile_grid(mosaic: GeoGrid, tile_px: int) -> list[TileFrame]:
    """Cut a mosaic into row-major, non-overlapping tile_px x tile_px frames.

    Trailing partial rows/columns are dropped so every tile has identical
    pixel dimensions.
    """
    if tile_px < 1:
        raise DataError(f"tile_px must be positive, got {tile_px}")
    if tile_px > mosaic.width_px or tile_px > mosaic.height_px:
        raise DataError(
            f"tile_px {tile_px} exceeds mosaic dims "
            f"{mosaic.width_px}x{mosaic.height_px}"
        )
    n_rows = mosaic.height_px // tile_px
    n_cols = mosaic.width_px // tile_px
    lon_step = (mosaic.lon_max - mosaic.lon_min) / mosaic.width_px
    lat_step = (mosaic.lat_max - mosaic.lat_min) / mosaic.height_px
    frames = []
    for row in range(n_rows):
        # Row 0 is the northern (lat_max) edge, matching raster order.
        lat_hi = mosaic.lat_max - row * tile_px * lat_step
        lat_lo = mosaic.lat_max - (row + 1) * tile_px * lat_step
        for col in range(n_cols):
            lon_lo = mosaic.lon_min + col * tile_px * lon_step
            lon_hi = mosaic.lon_min + (col + 1) * tile_px * lon_step
            grid = GeoGrid(
                lon_min=lon_lo,
                lon_max=lon_hi,
                lat_min=lat_lo,
                lat_max=lat_hi,
                pixel_size_m=mosaic.pixel_size_m,
                width_px=tile_px,
                height_px=tile_px,
            )
            frames.append(
                TileFrame(tile_id=f"r{row:03d}c{col:03d}", row=row, col=col, grid=grid)
            )
    return frames
