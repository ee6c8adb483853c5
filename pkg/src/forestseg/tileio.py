"""Raster tile container I/O.

Tiles are stored as uncompressed ``.npz`` archives (readable with plain
``numpy.load``) holding the pixel array plus the grid descriptor:

* feature tiles: ``bands`` (H, W, C) float32, ``band_names`` (C,) str
* label tiles:   ``labels`` (H, W) uint8 (binary or 4-class product codes)
* every tile:    ``lon`` [min, max], ``lat`` [min, max], ``pixel_size_m``
* optional:      ``cloud_fraction`` scalar, ``codes`` for 4-class products

Archives are written through :func:`write_npz_deterministic`, which pins the
zip timestamps so identical content yields identical bytes; the same writer
backs model checkpoints.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import DataError
from .grids import BinaryMask, FNF4Mask, GeoGrid, RasterChip

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def write_npz_deterministic(path, arrays: dict[str, np.ndarray]) -> None:
    """Write a .npz archive with fixed zip metadata (byte-deterministic)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]))
            info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def write_zip_deterministic(path, entries: dict[str, bytes]) -> None:
    """Same determinism guarantee for arbitrary byte payloads (checkpoints)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, entries[name])


def _grid_arrays(grid: GeoGrid) -> dict[str, np.ndarray]:
    return {
        "lon": np.array([grid.lon_min, grid.lon_max], dtype=np.float64),
        "lat": np.array([grid.lat_min, grid.lat_max], dtype=np.float64),
        "pixel_size_m": np.float64(grid.pixel_size_m),
    }


def _grid_from(data, shape) -> GeoGrid:
    lon = data["lon"]
    lat = data["lat"]
    return GeoGrid(
        lon_min=float(lon[0]),
        lon_max=float(lon[1]),
        lat_min=float(lat[0]),
        lat_max=float(lat[1]),
        pixel_size_m=float(data["pixel_size_m"]),
        width_px=int(shape[1]),
        height_px=int(shape[0]),
    )


def write_chip(path, chip: RasterChip, cloud_fraction: float | None = None) -> None:
    arrays = {
        "bands": chip.bands.astype(np.float32, copy=False),
        "band_names": np.array(chip.band_names, dtype="U16"),
        **_grid_arrays(chip.grid),
    }
    if cloud_fraction is not None:
        arrays["cloud_fraction"] = np.float64(cloud_fraction)
    write_npz_deterministic(path, arrays)


def write_mask(path, mask: BinaryMask | FNF4Mask) -> None:
    arrays = {
        "labels": mask.labels.astype(np.uint8, copy=False),
        **_grid_arrays(mask.grid),
    }
    if isinstance(mask, FNF4Mask):
        arrays["codes"] = np.array(mask.codes, dtype=np.int64)
    write_npz_deterministic(path, arrays)


def read_chip(path) -> RasterChip:
    with np.load(path) as data:
        if "bands" not in data:
            raise DataError(f"{path} is not a feature tile (no 'bands' array)")
        bands = data["bands"]
        names = tuple(str(n) for n in data["band_names"])
        grid = _grid_from(data, bands.shape[:2])
    return RasterChip(grid=grid, bands=bands, band_names=names)


def read_cloud_fraction(path) -> float | None:
    with np.load(path) as data:
        if "cloud_fraction" in data:
            return float(data["cloud_fraction"])
    return None


def read_mask(path) -> BinaryMask | FNF4Mask:
    """Read a label tile; 4-class products (with a ``codes`` array or labels
    outside {0,1}) come back as FNF4Mask, binary tiles as BinaryMask."""
    with np.load(path) as data:
        if "labels" not in data:
            raise DataError(f"{path} is not a label tile (no 'labels' array)")
        labels = data["labels"]
        grid = _grid_from(data, labels.shape)
        if "codes" in data:
            return FNF4Mask(grid=grid, labels=labels, codes=tuple(data["codes"]))
    return BinaryMask(grid=grid, labels=labels)


def json_bytes(obj) -> bytes:
    """Canonical JSON encoding used inside checkpoints and stats files."""
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()
