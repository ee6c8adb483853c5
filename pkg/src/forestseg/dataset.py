"""Manifest-driven dataset assembly.

The on-disk layout is ``<root>/<period>/<source>/<tile_id>.npz`` with sources
``s1`` (VV, VH), ``s2`` (B2, B3, B4, B8), ``cp`` (cloud probability) and
``fnf`` (label tile). A tab-separated manifest caches the index, one record
per line::

    tile_id  period  s1_path  s2_path  cp_path  fnf_path  cloud_fraction  split

Paths are stored relative to the manifest file; the split column is ``-``
until a split has been assigned.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .grids import BinaryMask, FNF4Mask, RasterChip, remap_fnf, resample_nearest
from .preprocess import SplitAssignment
from . import tileio

SOURCES = ("s1", "s2", "cp", "fnf")

SOURCE_BANDS = {
    "s1": ("VV", "VH"),
    "s2": ("B2", "B3", "B4", "B8"),
    "cp": ("CP",),
}

BAND_SOURCE = {band: src for src, bands in SOURCE_BANDS.items() for band in bands}


@dataclass(frozen=True)
class ScenarioSpec:
    """Named band-composition recipe fixing the model input channels."""

    name: str
    bands: tuple[str, ...]

    @property
    def channels(self) -> int:
        return len(self.bands)

    @property
    def sources(self) -> tuple[str, ...]:
        seen = []
        for band in self.bands:
            src = BAND_SOURCE[band]
            if src not in seen:
                seen.append(src)
        return tuple(seen)


SCENARIOS = {
    "S1": ScenarioSpec("S1", ("VV", "VH")),
    "S2": ScenarioSpec("S2", ("B2", "B3", "B4", "B8")),
    "S1-2": ScenarioSpec("S1-2", ("VV", "VH", "B2", "B3", "B4", "B8")),
    "S1-2-CP": ScenarioSpec("S1-2-CP", ("VV", "VH", "B2", "B3", "B4", "B8", "CP")),
}


def scenario_spec(name: str) -> ScenarioSpec:
    if name not in SCENARIOS:
        raise DataError(f"unknown scenario {name!r}; available: {sorted(SCENARIOS)}")
    return SCENARIOS[name]


@dataclass(frozen=True)
class ManifestEntry:
    tile_id: str
    period: str
    paths: dict[str, str]  # source -> path relative to the manifest root
    cloud_fraction: float
    split: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.cloud_fraction <= 1.0:
            raise DataError(
                f"cloud_fraction must lie in [0, 1], got {self.cloud_fraction} "
                f"for tile {self.tile_id}"
            )
        missing = [s for s in SOURCES if s not in self.paths]
        if missing:
            raise DataError(f"tile {self.tile_id} is missing sources {missing}")


@dataclass(frozen=True)
class SkipRecord:
    tile_id: str
    period: str
    reason: str


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    skipped: list[SkipRecord] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        seen = set()
        for e in self.entries:
            key = (e.tile_id, e.period)
            if key in seen:
                raise DataError(f"duplicate manifest entry for {key}")
            seen.add(key)

    def periods(self) -> list[str]:
        return sorted({e.period for e in self.entries})

    def tile_ids(self, period: str | None = None) -> list[str]:
        return sorted(
            {e.tile_id for e in self.entries if period is None or e.period == period}
        )

    def entry(self, tile_id: str, period: str) -> ManifestEntry:
        for e in self.entries:
            if e.tile_id == tile_id and e.period == period:
                return e
        raise DataError(f"no manifest entry for tile {tile_id!r} period {period!r}")

    def select(self, period: str | None = None, split: str | None = None):
        return [
            e
            for e in self.entries
            if (period is None or e.period == period)
            and (split is None or e.split == split)
        ]

    def has_split(self) -> bool:
        return all(e.split for e in self.entries)

    def with_split(self, assignment: SplitAssignment) -> "DatasetManifest":
        entries = []
        for e in self.entries:
            if e.tile_id not in assignment.assignment:
                raise DataError(f"split assignment misses tile {e.tile_id!r}")
            entries.append(replace(e, split=assignment.assignment[e.tile_id]))
        return DatasetManifest(root=self.root, entries=entries, skipped=self.skipped)

    def path(self, entry: ManifestEntry, source: str) -> Path:
        return self.root / entry.paths[source]


def build_manifest(root) -> DatasetManifest:
    """Index a dataset directory; incomplete tiles end up in the skip report
    rather than aborting the scan."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a readable directory")
    found: dict[tuple[str, str], dict[str, str]] = {}
    skips: list[SkipRecord] = []
    for period_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for source_dir in sorted(p for p in period_dir.iterdir() if p.is_dir()):
            source = source_dir.name
            if source not in SOURCES:
                continue
            for f in sorted(source_dir.iterdir()):
                if f.suffix != ".npz" or not f.is_file():
                    skips.append(
                        SkipRecord(f.name, period_dir.name, "unrecognized file name")
                    )
                    continue
                key = (f.stem, period_dir.name)
                found.setdefault(key, {})[source] = os.path.join(
                    period_dir.name, source, f.name
                )
    entries = []
    for (tile_id, period), paths in sorted(found.items()):
        missing = [s for s in SOURCES if s not in paths]
        if missing:
            skips.append(
                SkipRecord(tile_id, period, f"missing sources: {', '.join(missing)}")
            )
            continue
        cf = tileio.read_cloud_fraction(root / paths["cp"])
        if cf is None:
            cp = tileio.read_chip(root / paths["cp"])
            cf = float((cp.band("CP") > 0.5).mean())
        entries.append(
            ManifestEntry(
                tile_id=tile_id, period=period, paths=paths, cloud_fraction=cf
            )
        )
    return DatasetManifest(root=root, entries=entries, skipped=skips)


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Serialize to the tab-separated index format (paths relative to the
    manifest location)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for e in sorted(manifest.entries, key=lambda e: (e.tile_id, e.period)):
        rel = {
            s: os.path.relpath(manifest.root / e.paths[s], path.parent)
            for s in SOURCES
        }
        lines.append(
            "\t".join(
                [
                    e.tile_id,
                    e.period,
                    rel["s1"],
                    rel["s2"],
                    rel["cp"],
                    rel["fnf"],
                    f"{e.cloud_fraction:.6f}",
                    e.split or "-",
                ]
            )
        )
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} does not exist")
    entries = []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 8:
            raise DataError(f"{path}:{ln}: expected 8 tab-separated fields")
        tile_id, period, s1, s2, cp, fnf, cloud, split = parts
        entries.append(
            ManifestEntry(
                tile_id=tile_id,
                period=period,
                paths={"s1": s1, "s2": s2, "cp": cp, "fnf": fnf},
                cloud_fraction=float(cloud),
                split=None if split == "-" else split,
            )
        )
    manifest = DatasetManifest(root=path.parent, entries=entries)
    for e in manifest.entries:
        for s in SOURCES:
            p = manifest.path(e, s)
            if not p.is_file():
                raise DataError(f"manifest references missing file {p}")
    return manifest


def composite(
    chips: list[RasterChip],
    cloud_fractions: list[float],
    max_cloud: float = 0.2,
    method: str = "median",
) -> RasterChip:
    """Combine multi-date acquisitions of one tile into a single mosaic.

    Acquisitions above the cloud threshold are discarded first; the survivors
    are reduced per pixel/band with the chosen method.
    """
    if len(chips) != len(cloud_fractions):
        raise DataError("chips and cloud_fractions must be parallel lists")
    if method not in ("median", "mean", "first"):
        raise DataError(f"unknown compositing method {method!r}")
    if not chips:
        raise DataError("no acquisitions given")
    ref = chips[0]
    for c in chips[1:]:
        if c.grid != ref.grid:
            raise DataError("acquisitions must share one grid")
        if c.band_names != ref.band_names:
            raise DataError("acquisitions must share one band list")
    survivors = [c for c, cf in zip(chips, cloud_fractions) if cf <= max_cloud]
    if not survivors:
        raise DataError(
            f"no cloud-free coverage for tile: all {len(chips)} acquisitions "
            f"exceed max_cloud={max_cloud}"
        )
    if method == "first" or len(survivors) == 1:
        out = survivors[0].bands.copy()
    else:
        stack = np.stack([c.bands for c in survivors])
        out = np.median(stack, axis=0) if method == "median" else stack.mean(axis=0)
    return RasterChip(grid=ref.grid, bands=out, band_names=ref.band_names)


def composite_median(chips, cloud_fractions, max_cloud: float = 0.2) -> RasterChip:
    return composite(chips, cloud_fractions, max_cloud, method="median")


def assemble_scenario(
    sources: dict[str, RasterChip], spec: ScenarioSpec
) -> RasterChip:
    """Concatenate the per-source chips of one tile into the scenario's band
    order."""
    ref = None
    planes = []
    for band in spec.bands:
        src = BAND_SOURCE[band]
        if src not in sources:
            raise DataError(f"scenario {spec.name} needs source {src!r} (band {band})")
        chip = sources[src]
        if ref is None:
            ref = chip
        elif chip.grid != ref.grid:
            raise DataError(
                f"source {src!r} grid is not aligned with the other sources"
            )
        planes.append(chip.band(band))
    return RasterChip(
        grid=ref.grid,
        bands=np.stack(planes, axis=-1),
        band_names=spec.bands,
    )


def load_tile(
    manifest: DatasetManifest, entry: ManifestEntry, spec: ScenarioSpec
) -> tuple[RasterChip, BinaryMask]:
    """Read one tile's scenario features and its binary mask.

    Four-class label products are consolidated to forest/non-forest; coarser
    label grids are nearest-neighbor resampled onto the feature resolution.
    """
    sources = {
        src: tileio.read_chip(manifest.path(entry, src)) for src in spec.sources
    }
    features = assemble_scenario(sources, spec)
    mask = tileio.read_mask(manifest.path(entry, "fnf"))
    if isinstance(mask, FNF4Mask):
        mask = remap_fnf(mask)
    if mask.grid.pixel_size_m != features.grid.pixel_size_m:
        mask = resample_nearest(mask, features.grid.pixel_size_m)
    if mask.labels.shape != features.bands.shape[:2]:
        raise DataError(
            f"tile {entry.tile_id}: label dims {mask.labels.shape} do not match "
            f"features {features.bands.shape[:2]}"
        )
    return features, mask
