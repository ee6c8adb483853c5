"""Synthetic scene generation for offline testing and desk-scale training.

Scenes are built from smooth Gaussian blob fields: the forest mask is a
thresholded blob field, SAR bands get class-dependent means with
multiplicative speckle, optical bands get class-dependent means with additive
noise, and clouds (a second, independent blob field) overwrite the optical
values and drive the cloud-probability band toward 1 while leaving SAR
untouched. Everything is deterministic in the seed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import SOURCE_BANDS
from .errors import ConfigurationError, DataError
from .grids import BinaryMask, FNF4Mask, GeoGrid, RasterChip, tile_grid
from . import tileio

_METERS_PER_DEGREE = 111_320.0

# (non-forest, forest) band means in reflectance-like units.
BAND_MEANS = {
    "VV": (0.22, 0.62),
    "VH": (0.16, 0.52),
    "B2": (0.46, 0.27),
    "B3": (0.52, 0.33),
    "B4": (0.58, 0.24),
    "B8": (0.34, 0.70),
}


@dataclass(frozen=True)
class SyntheticSceneParams:
    seed: int = 0
    tile_px: int = 64
    forest_fraction: float = 0.7
    blob_scale: float = 8.0
    cloud_fraction: float = 0.0
    speckle_looks: float = 14.0
    optical_sigma: float = 0.04
    sar_contrast: float = 1.0
    optical_contrast: float = 1.0
    cloud_value: float = 0.88

    def __post_init__(self):
        if self.tile_px < 8:
            raise ConfigurationError(f"tile_px must be >= 8, got {self.tile_px}")
        for name in ("forest_fraction", "cloud_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")
        if self.blob_scale <= 0 or self.speckle_looks <= 0:
            raise ConfigurationError("blob_scale and speckle_looks must be positive")


def _blob_field(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=scale)
    return field


def _threshold_to_fraction(field: np.ndarray, fraction: float) -> np.ndarray:
    if fraction <= 0.0:
        return np.zeros(field.shape, dtype=bool)
    if fraction >= 1.0:
        return np.ones(field.shape, dtype=bool)
    return field >= np.quantile(field, 1.0 - fraction)


def _default_grid(tile_px: int) -> GeoGrid:
    extent_deg = tile_px * 10.0 / _METERS_PER_DEGREE
    return GeoGrid(
        lon_min=-6.0,
        lon_max=-6.0 + extent_deg,
        lat_min=6.0,
        lat_max=6.0 + extent_deg,
        pixel_size_m=10.0,
        width_px=tile_px,
        height_px=tile_px,
    )


def synth_mask(params: SyntheticSceneParams, grid: GeoGrid | None = None) -> BinaryMask:
    grid = grid or _default_grid(params.tile_px)
    rng = np.random.default_rng([params.seed, 0])
    field = _blob_field(rng, grid.shape, params.blob_scale)
    forest = _threshold_to_fraction(field, params.forest_fraction)
    return BinaryMask(grid=grid, labels=forest.astype(np.uint8))


def synth_scene(
    params: SyntheticSceneParams,
    grid: GeoGrid | None = None,
    mask: BinaryMask | None = None,
) -> tuple[dict[str, RasterChip], BinaryMask]:
    """Generate one tile: per-source feature chips plus its binary mask."""
    grid = grid or (mask.grid if mask is not None else _default_grid(params.tile_px))
    if mask is None:
        mask = synth_mask(params, grid)
    forest = mask.labels.astype(bool)
    shape = grid.shape

    cloud_rng = np.random.default_rng([params.seed, 1])
    if params.cloud_fraction > 0.0:
        cloud_field = _blob_field(cloud_rng, shape, params.blob_scale * 1.5)
        thr = np.quantile(cloud_field, 1.0 - params.cloud_fraction)
        clouds = cloud_field >= thr
        spread = 0.35 * float(cloud_field.std()) or 1.0
        cp = 1.0 / (1.0 + np.exp(-(cloud_field - thr) / spread))
    else:
        clouds = np.zeros(shape, dtype=bool)
        cp = np.zeros(shape, dtype=np.float64)

    band_rng = np.random.default_rng([params.seed, 2])
    chips: dict[str, RasterChip] = {}
    for source, names in SOURCE_BANDS.items():
        planes = []
        for band in names:
            if band == "CP":
                planes.append(cp)
                continue
            lo, hi = BAND_MEANS[band]
            mid = 0.5 * (lo + hi)
            contrast = params.sar_contrast if source == "s1" else params.optical_contrast
            lo = mid + (lo - mid) * contrast
            hi = mid + (hi - mid) * contrast
            base = np.where(forest, hi, lo)
            if source == "s1":
                speckle = band_rng.gamma(
                    params.speckle_looks, 1.0 / params.speckle_looks, size=shape
                )
                plane = base * speckle
            else:
                plane = base + band_rng.normal(0.0, params.optical_sigma, size=shape)
                cloud_plane = params.cloud_value + band_rng.normal(
                    0.0, params.optical_sigma, size=shape
                )
                plane = np.where(clouds, cloud_plane, plane)
            planes.append(plane)
        chips[source] = RasterChip(
            grid=grid,
            bands=np.stack(planes, axis=-1).astype(np.float32),
            band_names=names,
        )
    return chips, mask


def encode_fnf(mask: BinaryMask, rng: np.random.Generator) -> FNF4Mask:
    """Expand a binary mask into 4-class product codes (forest pixels become
    dense/non-dense forest, the rest non-forest/water)."""
    sub = rng.integers(0, 2, size=mask.labels.shape)
    labels = np.where(mask.labels == 1, 1 + sub, 3 + sub).astype(np.uint8)
    return FNF4Mask(grid=mask.grid, labels=labels)


def apply_deforestation(
    mask: BinaryMask, fraction: float, rng: np.random.Generator, blob_scale: float = 6.0
) -> BinaryMask:
    """Flip roughly ``fraction`` of the forest pixels to non-forest in
    contiguous patches."""
    if fraction <= 0.0:
        return mask
    forest = mask.labels.astype(bool)
    n_forest = int(forest.sum())
    if n_forest == 0:
        return mask
    field = _blob_field(rng, mask.labels.shape, blob_scale)
    cut = np.quantile(field[forest], 1.0 - fraction)
    cleared = forest & (field >= cut)
    labels = mask.labels.copy()
    labels[cleared] = 0
    return BinaryMask(grid=mask.grid, labels=labels)


def synth_dataset(
    root,
    n_tiles: int,
    params: SyntheticSceneParams,
    periods: tuple[str, ...] = ("2019",),
    deforest_fraction: float = 0.0,
    workers: int = 1,
) -> dict[str, int]:
    """Write a full synthetic dataset in the ingestion layout.

    Tiles are cut from one synthetic mosaic so each carries a distinct
    footprint; later periods re-use the first period's mask with deforestation
    patches applied, and re-draw noise and clouds.
    """
    if n_tiles < 1:
        raise DataError(f"n_tiles must be positive, got {n_tiles}")
    root = Path(root)
    n_cols = int(np.ceil(np.sqrt(n_tiles)))
    n_rows = int(np.ceil(n_tiles / n_cols))
    extent_lon = n_cols * params.tile_px * 10.0 / _METERS_PER_DEGREE
    extent_lat = n_rows * params.tile_px * 10.0 / _METERS_PER_DEGREE
    mosaic = GeoGrid(
        lon_min=-6.0,
        lon_max=-6.0 + extent_lon,
        lat_min=6.0,
        lat_max=6.0 + extent_lat,
        pixel_size_m=10.0,
        width_px=n_cols * params.tile_px,
        height_px=n_rows * params.tile_px,
    )
    frames = tile_grid(mosaic, params.tile_px)[:n_tiles]

    def build_tile(idx_frame):
        idx, frame = idx_frame
        base_mask = None
        for pi, period in enumerate(periods):
            p = replace(params, seed=_tile_seed(params.seed, idx, pi))
            if pi == 0:
                chips, mask = synth_scene(p, grid=frame.grid)
                base_mask = mask
            else:
                rng = np.random.default_rng([p.seed, 3])
                mask = apply_deforestation(base_mask, deforest_fraction, rng)
                chips, mask = synth_scene(p, grid=frame.grid, mask=mask)
            fnf = encode_fnf(mask, np.random.default_rng([p.seed, 4]))
            cf = float((chips["cp"].band("CP") > 0.5).mean())
            for source, chip in chips.items():
                tileio.write_chip(
                    root / period / source / f"{frame.tile_id}.npz",
                    chip,
                    cloud_fraction=cf if source == "cp" else None,
                )
            tileio.write_mask(root / period / "fnf" / f"{frame.tile_id}.npz", fnf)
        return 1

    items = list(enumerate(frames))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            written = sum(pool.map(build_tile, items))
    else:
        written = sum(build_tile(it) for it in items)
    return {"tiles": written, "periods": len(periods)}


def _tile_seed(base_seed: int, tile_index: int, period_index: int) -> int:
    return int(
        np.random.SeedSequence([base_seed, tile_index, period_index]).generate_state(1)[0]
    )
