import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forestseg.errors import DataError
from forestseg.grids import (
    BinaryMask,
    FNF4Mask,
    GeoGrid,
    RasterChip,
    remap_fnf,
    resample_nearest,
    tile_grid,
    upsample_nearest,
)

from .conftest import make_grid, random_mask


class TestGeoGrid:
    def test_invariants_enforced(self):
        with pytest.raises(DataError):
            make_grid(0, 4)
        with pytest.raises(DataError):
            GeoGrid(-1, -2, 0, 1, 10.0, 4, 4)  # lon_min > lon_max
        with pytest.raises(DataError):
            GeoGrid(-1, 0, 0, 1, -5.0, 4, 4)

    def test_pixel_area(self):
        assert make_grid(4, 4, 10.0).pixel_area_m2 == 100.0
        assert make_grid(4, 4, 25.0).pixel_area_m2 == 625.0

    def test_tile_footprint_area_matches_ground_sampling(self):
        # 256 px at 10 m/px covers 6.5536 km^2 (the "~6.55 km^2" tile)
        grid = make_grid(256, 256, 10.0)
        assert grid.area_km2 == pytest.approx(6.5536, abs=1e-12)


class TestRemapFnf:
    def test_four_codes_collapse_to_two(self):
        grid = make_grid(2, 2)
        mask = FNF4Mask(grid=grid, labels=np.array([[1, 2], [3, 4]]))
        out = remap_fnf(mask)
        np.testing.assert_array_equal(out.labels, [[1, 1], [0, 0]])
        assert out.grid == grid

    def test_single_class_identity(self):
        grid = make_grid(3, 3)
        out = remap_fnf(FNF4Mask(grid=grid, labels=np.ones((3, 3), dtype=int)))
        assert out.labels.all()

    def test_matches_per_pixel_membership_oracle(self, rng):
        labels = rng.integers(1, 5, size=(16, 16))
        out = remap_fnf(FNF4Mask(grid=make_grid(16, 16), labels=labels))
        for i in range(16):
            for j in range(16):
                assert out.labels[i, j] == (1 if labels[i, j] in (1, 2) else 0)

    def test_unknown_code_rejected_with_location(self):
        labels = np.ones((4, 4), dtype=int)
        labels[2, 3] = 7
        with pytest.raises(DataError, match=r"7.*\(2, 3\)"):
            FNF4Mask(grid=make_grid(4, 4), labels=labels)

    def test_custom_codes(self):
        # other product versions may use different integer codes
        grid = make_grid(1, 4)
        mask = FNF4Mask(grid=grid, labels=np.array([[10, 20, 30, 40]]), codes=(10, 20, 30, 40))
        np.testing.assert_array_equal(remap_fnf(mask).labels, [[1, 1, 0, 0]])

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_remap_inverts_random_preimage(self, seed):
        # lifting a binary mask into {1,2}/{3,4} and remapping returns it
        rng = np.random.default_rng(seed)
        binary = rng.integers(0, 2, size=(8, 8))
        lifted = np.where(binary == 1, rng.integers(1, 3, (8, 8)), rng.integers(3, 5, (8, 8)))
        out = remap_fnf(FNF4Mask(grid=make_grid(8, 8), labels=lifted))
        np.testing.assert_array_equal(out.labels, binary)


class TestUpsampleNearest:
    def test_factor_one_is_identity(self, rng):
        mask = random_mask(rng)
        out = upsample_nearest(mask, 1)
        np.testing.assert_array_equal(out.labels, mask.labels)

    def test_block_replication(self):
        mask = BinaryMask(grid=make_grid(1, 2), labels=np.array([[1, 0]]))
        out = upsample_nearest(mask, 2)
        np.testing.assert_array_equal(out.labels, [[1, 1, 0, 0], [1, 1, 0, 0]])
        assert out.grid.pixel_size_m == mask.grid.pixel_size_m / 2

    def test_bad_factor_rejected(self, rng):
        with pytest.raises(DataError):
            upsample_nearest(random_mask(rng), 0)
        with pytest.raises(DataError):
            upsample_nearest(random_mask(rng), 2.5)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 5))
    @settings(max_examples=25, deadline=None)
    def test_forest_fraction_preserved(self, seed, factor):
        mask = random_mask(np.random.default_rng(seed), 7, 9)
        out = upsample_nearest(mask, factor)
        assert out.labels.mean() == mask.labels.mean()
        assert out.labels.shape == (7 * factor, 9 * factor)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(1, 3))
    @settings(max_examples=20, deadline=None)
    def test_composition(self, seed, a, b):
        mask = random_mask(np.random.default_rng(seed), 6, 6)
        once = upsample_nearest(mask, a * b)
        twice = upsample_nearest(upsample_nearest(mask, a), b)
        np.testing.assert_array_equal(once.labels, twice.labels)
        assert twice.grid.pixel_size_m == pytest.approx(
            once.grid.pixel_size_m, rel=1e-12
        )


class TestResampleNearest:
    def test_integer_ratio_matches_upsample(self, rng):
        mask = random_mask(rng, 8, 8, pixel_size_m=20.0)
        general = resample_nearest(mask, 10.0)
        special = upsample_nearest(mask, 2)
        np.testing.assert_array_equal(general.labels, special.labels)

    def test_rational_ratio_25_to_10(self, rng):
        # the coarse-product alignment case: 25 m -> 10 m is a 5/2 ratio
        mask = random_mask(rng, 10, 10, pixel_size_m=25.0)
        out = resample_nearest(mask, 10.0)
        assert out.labels.shape == (25, 25)
        assert out.grid.pixel_size_m == pytest.approx(10.0)
        # each output pixel equals the source pixel containing its centre
        for i in range(25):
            for j in range(25):
                si = int((i + 0.5) / 2.5)
                sj = int((j + 0.5) / 2.5)
                assert out.labels[i, j] == mask.labels[si, sj]

    def test_fraction_roughly_preserved(self, rng):
        mask = random_mask(rng, 20, 20, p=0.7, pixel_size_m=25.0)
        out = resample_nearest(mask, 10.0)
        assert abs(float(out.labels.mean()) - float(mask.labels.mean())) < 0.05


class TestTileGrid:
    def test_exact_division(self):
        frames = tile_grid(make_grid(512, 512), 256)
        assert len(frames) == 4
        assert [f.tile_id for f in frames] == ["r000c000", "r000c001", "r001c000", "r001c001"]

    def test_remainder_dropped(self):
        frames = tile_grid(make_grid(600, 600), 256)
        assert len(frames) == 4

    def test_too_large_tile_rejected(self):
        with pytest.raises(DataError):
            tile_grid(make_grid(128, 128), 256)

    def test_frame_footprint_area(self):
        frames = tile_grid(make_grid(512, 512, 10.0), 256)
        for f in frames:
            assert f.grid.area_km2 == pytest.approx(6.5536, abs=1e-9)

    @given(st.integers(5, 40), st.integers(5, 40), st.integers(2, 12))
    @settings(max_examples=30, deadline=None)
    def test_count_and_disjointness(self, h, w, t):
        if t > min(h, w):
            return
        mosaic = make_grid(h, w)
        frames = tile_grid(mosaic, t)
        assert len(frames) == (h // t) * (w // t)
        # pairwise disjoint longitude/latitude boxes within one row/col
        seen = set()
        for f in frames:
            key = (f.row, f.col)
            assert key not in seen
            seen.add(key)
            assert f.grid.width_px == f.grid.height_px == t
        # frames tile the truncated extent without overlap: total area check
        total = sum(f.grid.area_km2 for f in frames)
        expected = (h // t) * (w // t) * (t * t * mosaic.pixel_area_m2 * 1e-6)
        assert total == pytest.approx(expected, rel=1e-9)

    def test_purity(self):
        a = tile_grid(make_grid(100, 100), 32)
        b = tile_grid(make_grid(100, 100), 32)
        assert a == b


class TestChipValidation:
    def test_dims_must_match_grid(self, rng):
        with pytest.raises(DataError):
            RasterChip(grid=make_grid(4, 4), bands=np.zeros((4, 5, 2)), band_names=("a", "b"))

    def test_duplicate_band_names_rejected(self):
        with pytest.raises(DataError):
            RasterChip(grid=make_grid(4, 4), bands=np.zeros((4, 4, 2)), band_names=("a", "a"))

    def test_band_lookup(self, rng):
        bands = rng.random((4, 4, 2)).astype(np.float32)
        chip = RasterChip(grid=make_grid(4, 4), bands=bands, band_names=("VV", "VH"))
        np.testing.assert_array_equal(chip.band("VH"), bands[:, :, 1])
        with pytest.raises(DataError):
            chip.band("B2")
