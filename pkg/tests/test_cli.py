import json

import numpy as np
import pytest

from forestseg import tileio
from forestseg.cli import main
from forestseg.grids import BinaryMask, RasterChip
from forestseg.metrics import ComparisonTable
from forestseg.nn.autodiff import Tensor
from forestseg.nn.checkpoint import save_checkpoint
from forestseg.nn.models import ARCHITECTURES, ModelConfig, SegmentationModel, build_model
from forestseg.preprocess import NormalizationStats
from forestseg.training import TrainConfig

from .conftest import make_grid


def run_cli(args, capsys, expect_exit=0):
    code = 0
    try:
        main([str(a) for a in args])
    except SystemExit as e:
        code = e.code or 0
    captured = capsys.readouterr()
    assert code == expect_exit, (
        f"exit {code} != {expect_exit}\nstdout: {captured.out}\nstderr: {captured.err}"
    )
    return captured


class OracleModel(SegmentationModel):
    """Reads the first input channel as the truth and reports it as a
    near-saturated probability. Test-only stand-in registered through the
    architecture registry."""

    def __init__(self, config, rng):
        super().__init__(config)

    def forward(self, x):
        logits = 12.0 * (x.data[:, :1] - 0.5)
        return Tensor(1.0 / (1.0 + np.exp(-logits)))


@pytest.fixture
def oracle_arch(monkeypatch):
    monkeypatch.setitem(ARCHITECTURES, "oracle_band0", OracleModel)
    return "oracle_band0"


def write_oracle_tileset(root, masks_by_period, grid_for):
    """Tile layout whose VV band equals the binary mask, so OracleModel
    classifies perfectly."""
    for period, masks in masks_by_period.items():
        for tile_id, labels in masks.items():
            grid = grid_for(tile_id)
            vv = labels.astype(np.float32)
            vh = np.full_like(vv, 0.25)
            s1 = RasterChip(grid=grid, bands=np.stack([vv, vh], -1), band_names=("VV", "VH"))
            s2 = RasterChip(
                grid=grid,
                bands=np.full((*labels.shape, 4), 0.4, np.float32),
                band_names=("B2", "B3", "B4", "B8"),
            )
            cp = RasterChip(
                grid=grid,
                bands=np.zeros((*labels.shape, 1), np.float32),
                band_names=("CP",),
            )
            tileio.write_chip(root / period / "s1" / f"{tile_id}.npz", s1)
            tileio.write_chip(root / period / "s2" / f"{tile_id}.npz", s2)
            tileio.write_chip(root / period / "cp" / f"{tile_id}.npz", cp, cloud_fraction=0.0)
            tileio.write_mask(
                root / period / "fnf" / f"{tile_id}.npz",
                BinaryMask(grid=grid, labels=labels.astype(np.uint8)),
            )


def save_oracle_checkpoint(path, oracle_arch, scenario="S1", period="2019", seed=0):
    cfg = ModelConfig(arch=oracle_arch, in_channels=2, base_width=4, depth=2, seed=seed)
    model = build_model(cfg)
    stats = NormalizationStats(
        bands={"VV": (0.0, 1.0), "VH": (0.0, 1.0)}, orientation="standard"
    )
    tc = TrainConfig(
        arch=oracle_arch, scenario=scenario, period=period, seed=seed,
        base_width=4, depth=2, epochs=1,
        normalization_orientation="standard",
    )
    save_checkpoint(path, model, stats, meta={"train_config": tc.to_dict()})


class TestSynthAndIngest:
    def test_synth_then_ingest_counts(self, tmp_path, capsys):
        run_cli(["synth", "--out", tmp_path / "d", "--tiles", 10, "--tile-px", 16,
                 "--seed", 3], capsys)
        out = run_cli(["ingest", "--root", tmp_path / "d"], capsys)
        assert "indexed 10 tile entries" in out.out
        assert (tmp_path / "d" / "manifest.tsv").exists()

    def test_synth_deterministic_bytes(self, tmp_path, capsys):
        for name in ("a", "b"):
            run_cli(["synth", "--out", tmp_path / name, "--tiles", 4,
                     "--tile-px", 16, "--seed", 7], capsys)
        for p in sorted((tmp_path / "a").rglob("*.npz")):
            q = tmp_path / "b" / p.relative_to(tmp_path / "a")
            assert p.read_bytes() == q.read_bytes()

    def test_synth_forest_fraction_realized(self, tmp_path, capsys):
        run_cli(["synth", "--out", tmp_path / "d", "--tiles", 25, "--tile-px", 32,
                 "--forest-fraction", 0.75, "--seed", 1], capsys)
        shares = []
        for f in (tmp_path / "d" / "2019" / "fnf").iterdir():
            mask = tileio.read_mask(f)
            shares.append(np.isin(mask.labels, (1, 2)).mean())
        assert abs(float(np.mean(shares)) - 0.75) < 0.05

    def test_synth_unwritable_destination_exits_2(self, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("a file, not a directory")
        out = run_cli(["synth", "--out", blocker / "sub", "--tiles", 2,
                       "--tile-px", 16], capsys, expect_exit=2)
        assert "cannot create output root" in out.err

    def test_ingest_empty_dir_exits_3(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        out = run_cli(["ingest", "--root", tmp_path / "empty"], capsys, expect_exit=3)
        assert "no complete tiles" in out.err

    def test_ingest_skip_report_and_idempotence(self, tmp_path, capsys):
        run_cli(["synth", "--out", tmp_path / "d", "--tiles", 4, "--tile-px", 16,
                 "--seed", 2], capsys)
        victims = sorted((tmp_path / "d" / "2019" / "fnf").iterdir())
        victims[0].unlink()
        out1 = run_cli(["ingest", "--root", tmp_path / "d", "--out",
                        tmp_path / "m1.tsv"], capsys)
        assert "indexed 3 tile entries (1 skipped)" in out1.out
        assert "missing sources: fnf" in out1.err
        run_cli(["ingest", "--root", tmp_path / "d", "--out", tmp_path / "m2.tsv"],
                capsys)
        m1 = (tmp_path / "m1.tsv").read_text()
        m2 = (tmp_path / "m2.tsv").read_text()
        assert [l.split("\t")[0] for l in m1.splitlines()] == [
            l.split("\t")[0] for l in m2.splitlines()
        ]


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("clidata")
    main(["synth", "--out", str(root / "d"), "--tiles", "12", "--tile-px", "16",
          "--periods", "2019,2020", "--seed", "5"])
    main(["ingest", "--root", str(root / "d")])
    return root / "d"


class TestTrainEval:
    def test_train_writes_run_artifacts(self, cli_dataset, tmp_path, capsys):
        run = tmp_path / "run"
        out = run_cli(
            ["train", "--manifest", cli_dataset / "manifest.tsv", "--out", run,
             "--arch", "unet", "--scenario", "S1", "--epochs", 2,
             "--batch-size", 4, "--base-width", 4, "--depth", 2,
             "--learning-rate", 1e-3],
            capsys,
        )
        assert "best val_f1" in out.out
        assert (run / "checkpoint_best.ckpt").exists()
        assert (run / "history.csv").exists()
        assert (run / "train_config.json").exists()
        assert (run / "manifest.tsv").exists()

    def test_desk_scale_run_completes_quickly(self, cli_dataset, tmp_path, capsys):
        import time

        t0 = time.perf_counter()
        run_cli(
            ["train", "--manifest", cli_dataset / "manifest.tsv",
             "--out", tmp_path / "r", "--epochs", 2, "--batch-size", 4,
             "--base-width", 4, "--depth", 2],
            capsys,
        )
        assert time.perf_counter() - t0 < 300

    def test_same_seed_runs_byte_identical(self, cli_dataset, tmp_path, capsys):
        for name in ("a", "b"):
            run_cli(
                ["train", "--manifest", cli_dataset / "manifest.tsv",
                 "--out", tmp_path / name, "--epochs", 1, "--batch-size", 4,
                 "--base-width", 4, "--depth", 2, "--seed", 3],
                capsys,
            )
        assert (tmp_path / "a" / "checkpoint_best.ckpt").read_bytes() == (
            tmp_path / "b" / "checkpoint_best.ckpt"
        ).read_bytes()
        assert (tmp_path / "a" / "manifest.tsv").read_text() == (
            tmp_path / "b" / "manifest.tsv"
        ).read_text()

    def test_missing_manifest_exits_3(self, tmp_path, capsys):
        out = run_cli(
            ["train", "--manifest", tmp_path / "absent.tsv", "--out", tmp_path / "r"],
            capsys, expect_exit=3,
        )
        assert "does not exist" in out.err

    def test_config_file_overrides_flags(self, cli_dataset, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("epochs: 1\nbase_width: 4\ndepth: 2\nbatch_size: 4\n")
        run = tmp_path / "run"
        run_cli(
            ["train", "--manifest", cli_dataset / "manifest.tsv", "--out", run,
             "--epochs", 99, "--config", cfg, "--base-width", 16],
            capsys,
        )
        snapshot = json.loads((run / "train_config.json").read_text())
        assert snapshot["epochs"] == 1  # file wins over the flag
        assert snapshot["base_width"] == 4

    def test_unknown_config_key_exits_2(self, cli_dataset, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("lr: 0.1\n")
        out = run_cli(
            ["train", "--manifest", cli_dataset / "manifest.tsv",
             "--out", tmp_path / "r", "--config", cfg],
            capsys, expect_exit=2,
        )
        assert "unknown keys" in out.err


class TestEvalWithOracle:
    def _grid_for(self, tile_id, h=16, w=16):
        return make_grid(h, w)

    def _dataset(self, tmp_path, rng, n=6, periods=("2019",)):
        masks = {
            p: {
                f"t{i:03d}": (rng.random((16, 16)) < 0.6).astype(np.uint8)
                for i in range(n)
            }
            for p in periods
        }
        write_oracle_tileset(tmp_path / "d", masks, self._grid_for)
        main(["ingest", "--root", str(tmp_path / "d")])
        return tmp_path / "d" / "manifest.tsv", masks

    def test_perfect_oracle_scores_ones(self, tmp_path, rng, capsys, oracle_arch):
        manifest, _ = self._dataset(tmp_path, rng)
        ckpt = tmp_path / "oracle.ckpt"
        save_oracle_checkpoint(ckpt, oracle_arch)
        out = run_cli(
            ["eval", "--checkpoint", ckpt, "--manifest", manifest,
             "--period", "2019", "--out", tmp_path / "reports"],
            capsys,
        )
        assert "accuracy 1.0000" in out.out
        assert "f1 1.0000" in out.out
        table = ComparisonTable.read_csv(
            tmp_path / "reports" / "metrics_oracle_band0_S1_2019.csv"
        )
        row = table.rows[0]
        assert (row.accuracy, row.precision, row.recall, row.f1, row.auc_pr) == (
            1.0, 1.0, 1.0, 1.0, 1.0,
        )

    def test_two_periods_two_rows(self, tmp_path, rng, capsys, oracle_arch):
        manifest, _ = self._dataset(tmp_path, rng, periods=("2019", "2020"))
        ckpt = tmp_path / "oracle.ckpt"
        save_oracle_checkpoint(ckpt, oracle_arch)
        run_cli(
            ["eval", "--checkpoint", ckpt, "--manifest", manifest,
             "--period", "2019", "--period", "2020", "--out", tmp_path / "reports"],
            capsys,
        )
        table = ComparisonTable.read_csv(tmp_path / "reports" / "metrics_all.csv")
        assert sorted(r.period for r in table.rows) == ["2019", "2020"]

    def test_report_matches_library_metrics(self, tmp_path, rng, capsys, oracle_arch):
        # degrade the oracle: flip some truth pixels in the label tiles so
        # metrics are nontrivial, then recompute them library-side
        manifest, masks = self._dataset(tmp_path, rng)
        root = tmp_path / "d"
        flipped = {}
        for i, (tile_id, labels) in enumerate(sorted(masks["2019"].items())):
            noisy = labels.copy()
            if i % 2 == 0:
                noisy[:4, :4] ^= 1
            flipped[tile_id] = noisy
            tileio.write_mask(
                root / "2019" / "fnf" / f"{tile_id}.npz",
                BinaryMask(grid=self._grid_for(tile_id), labels=noisy),
            )
        ckpt = tmp_path / "oracle.ckpt"
        save_oracle_checkpoint(ckpt, oracle_arch)
        run_cli(
            ["eval", "--checkpoint", ckpt, "--manifest", manifest,
             "--period", "2019", "--split", "test", "--out", tmp_path / "reports"],
            capsys,
        )
        table = ComparisonTable.read_csv(
            tmp_path / "reports" / "metrics_oracle_band0_S1_2019.csv"
        )
        row = table.rows[0]

        # library-side recomputation on the same split
        from forestseg.dataset import read_manifest
        from forestseg.metrics import evaluate_probabilities
        from forestseg.preprocess import split_tile_ids

        m = read_manifest(manifest)
        assignment = split_tile_ids(m.tile_ids(), seed=0)
        test_tiles = [t for t in m.tile_ids() if assignment.assignment[t] == "test"]
        probs, targets = [], []
        k = 12.0
        for t in sorted(test_tiles):
            vv = masks["2019"][t].astype(np.float64)
            probs.append(1.0 / (1.0 + np.exp(-k * (vv - 0.5))))
            targets.append(flipped[t])
        want = evaluate_probabilities(
            np.concatenate([p.ravel() for p in probs]),
            np.concatenate([t.ravel() for t in targets]),
        )
        assert row.accuracy == round(want.accuracy, 4)
        assert row.precision == round(want.precision, 4)
        assert row.recall == round(want.recall, 4)
        assert row.f1 == round(want.f1, 4)
        assert row.auc_pr == round(want.auc_pr, 4)


class TestDetect:
    def _grid_for(self, tile_id):
        return make_grid(40, 40)

    def test_identical_periods_zero_area(self, tmp_path, rng, capsys, oracle_arch):
        labels = (rng.random((40, 40)) < 0.6).astype(np.uint8)
        write_oracle_tileset(
            tmp_path / "d",
            {"2019": {"t0": labels}, "2020": {"t0": labels}},
            self._grid_for,
        )
        main(["ingest", "--root", str(tmp_path / "d")])
        ckpt = tmp_path / "o.ckpt"
        save_oracle_checkpoint(ckpt, oracle_arch)
        out = run_cli(
            ["detect", "--checkpoint", ckpt, "--manifest", tmp_path / "d" / "manifest.tsv",
             "--period-a", "2019", "--period-b", "2020", "--out", tmp_path / "det"],
            capsys,
        )
        report = json.loads((tmp_path / "det" / "area_report.json").read_text())
        assert report["deforested_km2"] == 0.0
        assert report["afforested_km2"] == 0.0

    def test_thousand_flipped_pixels_is_point_one_km2(self, tmp_path, rng, capsys,
                                                      oracle_arch):
        t0 = np.ones((40, 40), dtype=np.uint8)
        t1 = t0.copy()
        flat = t1.ravel()
        flat[:1000] = 0
        write_oracle_tileset(
            tmp_path / "d", {"2019": {"t0": t0}, "2020": {"t0": t1}}, self._grid_for
        )
        main(["ingest", "--root", str(tmp_path / "d")])
        ckpt = tmp_path / "o.ckpt"
        save_oracle_checkpoint(ckpt, oracle_arch)
        out = run_cli(
            ["detect", "--checkpoint", ckpt, "--manifest", tmp_path / "d" / "manifest.tsv",
             "--period-a", "2019", "--period-b", "2020", "--out", tmp_path / "det"],
            capsys,
        )
        report = json.loads((tmp_path / "det" / "area_report.json").read_text())
        assert report["deforested_px"] == 1000
        assert report["deforested_km2"] == 0.1
        assert (tmp_path / "det" / "overlays" / "t0.png").exists()
        assert (tmp_path / "det" / "changemaps" / "t0.npz").exists()

    def test_close_periods_warn(self, tmp_path, rng, capsys, oracle_arch):
        labels = (rng.random((40, 40)) < 0.6).astype(np.uint8)
        write_oracle_tileset(
            tmp_path / "d",
            {"2020-01-01": {"t0": labels}, "2020-01-05": {"t0": labels}},
            self._grid_for,
        )
        main(["ingest", "--root", str(tmp_path / "d")])
        ckpt = tmp_path / "o.ckpt"
        save_oracle_checkpoint(ckpt, oracle_arch, period="2020-01-01")
        out = run_cli(
            ["detect", "--checkpoint", ckpt, "--manifest", tmp_path / "d" / "manifest.tsv",
             "--period-a", "2020-01-01", "--period-b", "2020-01-05",
             "--out", tmp_path / "det"],
            capsys,
        )
        assert "revisit floor" in out.err

    def test_year_periods_do_not_warn(self, tmp_path, rng, capsys, oracle_arch):
        labels = (rng.random((40, 40)) < 0.6).astype(np.uint8)
        write_oracle_tileset(
            tmp_path / "d", {"2019": {"t0": labels}, "2020": {"t0": labels}},
            self._grid_for,
        )
        main(["ingest", "--root", str(tmp_path / "d")])
        ckpt = tmp_path / "o.ckpt"
        save_oracle_checkpoint(ckpt, oracle_arch)
        out = run_cli(
            ["detect", "--checkpoint", ckpt, "--manifest", tmp_path / "d" / "manifest.tsv",
             "--period-a", "2019", "--period-b", "2020", "--out", tmp_path / "det"],
            capsys,
        )
        assert "revisit" not in out.err
