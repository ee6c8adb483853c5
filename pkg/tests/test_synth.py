import numpy as np
import pytest

from forestseg.errors import ConfigurationError
from forestseg.synth import (
    SyntheticSceneParams,
    apply_deforestation,
    encode_fnf,
    synth_dataset,
    synth_scene,
)


def test_param_validation():
    with pytest.raises(ConfigurationError):
        SyntheticSceneParams(tile_px=4)
    with pytest.raises(ConfigurationError):
        SyntheticSceneParams(forest_fraction=1.5)
    with pytest.raises(ConfigurationError):
        SyntheticSceneParams(cloud_fraction=-0.1)


def test_same_seed_bit_identical():
    params = SyntheticSceneParams(seed=9, tile_px=32, cloud_fraction=0.3)
    chips1, mask1 = synth_scene(params)
    chips2, mask2 = synth_scene(params)
    np.testing.assert_array_equal(mask1.labels, mask2.labels)
    for src in chips1:
        np.testing.assert_array_equal(chips1[src].bands, chips2[src].bands)


def test_no_clouds_means_zero_cp():
    chips, _ = synth_scene(SyntheticSceneParams(seed=0, tile_px=32, cloud_fraction=0.0))
    assert (chips["cp"].band("CP") == 0).all()


def test_forest_fraction_realized():
    # mean realized share over many seeds stays near the target
    shares = []
    for seed in range(100):
        params = SyntheticSceneParams(seed=seed, tile_px=64, forest_fraction=0.75)
        _, mask = synth_scene(params)
        shares.append(mask.labels.mean())
    assert abs(float(np.mean(shares)) - 0.75) < 0.05


def test_clouds_occlude_optical_only():
    params = SyntheticSceneParams(seed=4, tile_px=64, cloud_fraction=0.4)
    cloudy, mask = synth_scene(params)
    clear, mask2 = synth_scene(
        SyntheticSceneParams(seed=4, tile_px=64, cloud_fraction=0.0)
    )
    np.testing.assert_array_equal(mask.labels, mask2.labels)
    # SAR untouched by cloud placement
    np.testing.assert_array_equal(cloudy["s1"].bands, clear["s1"].bands)
    # optical overwritten where CP is high
    cp = cloudy["cp"].band("CP")
    occluded = cp > 0.9
    assert occluded.any()
    b4_cloudy = cloudy["s2"].band("B4")[occluded]
    b4_clear = clear["s2"].band("B4")[occluded]
    assert (np.abs(b4_cloudy - b4_clear) > 0.05).mean() > 0.9


def test_sar_statistically_independent_of_clouds():
    # pooled correlation between the cloud-probability and VV bands stays
    # tiny; 64 px tiles give enough independent blob patches for the
    # estimate to resolve below the 0.05 bound
    cps, vvs = [], []
    for seed in range(100):
        params = SyntheticSceneParams(seed=seed, tile_px=64, cloud_fraction=0.3)
        chips, _ = synth_scene(params)
        cps.append(chips["cp"].band("CP").ravel())
        vvs.append(chips["s1"].band("VV").ravel())
    r = np.corrcoef(np.concatenate(cps), np.concatenate(vvs))[0, 1]
    assert abs(r) < 0.05


def test_sar_classes_separate():
    chips, mask = synth_scene(SyntheticSceneParams(seed=7, tile_px=64))
    vv = chips["s1"].band("VV")
    forest = mask.labels.astype(bool)
    assert vv[forest].mean() > vv[~forest].mean() + 0.2


def test_encode_fnf_round_trip():
    params = SyntheticSceneParams(seed=2, tile_px=32)
    _, mask = synth_scene(params)
    fnf = encode_fnf(mask, np.random.default_rng(0))
    assert set(np.unique(fnf.labels)) <= {1, 2, 3, 4}
    forest_codes = np.isin(fnf.labels, (1, 2))
    np.testing.assert_array_equal(forest_codes.astype(np.uint8), mask.labels)


def test_apply_deforestation_targets_fraction():
    _, mask = synth_scene(SyntheticSceneParams(seed=6, tile_px=64, forest_fraction=0.7))
    before = int(mask.labels.sum())
    after_mask = apply_deforestation(mask, 0.1, np.random.default_rng(1))
    cleared = before - int(after_mask.labels.sum())
    assert cleared == pytest.approx(0.1 * before, rel=0.2)
    # deforestation only removes forest
    assert not ((after_mask.labels == 1) & (mask.labels == 0)).any()


def test_synth_dataset_layout_and_determinism(tmp_path):
    params = SyntheticSceneParams(seed=5, tile_px=16, cloud_fraction=0.2)
    synth_dataset(tmp_path / "a", 3, params, periods=("2019", "2020"), deforest_fraction=0.05)
    synth_dataset(tmp_path / "b", 3, params, periods=("2019", "2020"), deforest_fraction=0.05)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.npz"))
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*.npz"))
    assert files_a == files_b
    assert len(files_a) == 3 * 2 * 4  # tiles x periods x sources
    for rel in files_a:
        assert ((tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes())


def test_synth_dataset_workers_equivalent(tmp_path):
    params = SyntheticSceneParams(seed=8, tile_px=16)
    synth_dataset(tmp_path / "serial", 4, params)
    synth_dataset(tmp_path / "parallel", 4, params, workers=4)
    for p in sorted((tmp_path / "serial").rglob("*.npz")):
        q = tmp_path / "parallel" / p.relative_to(tmp_path / "serial")
        assert p.read_bytes() == q.read_bytes()


def test_distinct_tiles_have_distinct_content_and_footprints(tmp_path):
    params = SyntheticSceneParams(seed=5, tile_px=16)
    synth_dataset(tmp_path / "d", 2, params)
    from forestseg import tileio

    tiles = sorted((tmp_path / "d" / "2019" / "s1").iterdir())
    a = tileio.read_chip(tiles[0])
    b = tileio.read_chip(tiles[1])
    assert a.grid != b.grid
    assert not np.array_equal(a.bands, b.bands)
