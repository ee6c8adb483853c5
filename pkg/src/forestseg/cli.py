"""Command-line entry point.

Subcommands follow the pipeline stages: ``synth`` / ``ingest`` produce a tile
layout and manifest, ``train`` fits one (architecture, scenario) pair,
``eval`` scores a checkpoint on test periods, ``detect`` derives deforestation
maps and area totals between two periods, and ``sweep`` runs the full
architecture x scenario grid and emits a comparison report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. A YAML config file passed with --config overrides the corresponding
command-line flags.
"""

from __future__ import annotations

import datetime
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import __version__
from .changemap import (
    AreaEstimate,
    area_estimate,
    detect_change,
    save_overlay,
    write_change_raster,
)
from .dataset import (
    SCENARIOS,
    DatasetManifest,
    build_manifest,
    load_tile,
    read_manifest,
    scenario_spec,
    write_manifest,
)
from .errors import ConfigurationError, DataError, PipelineError
from .grids import BinaryMask
from .metrics import MetricReport, binarize, evaluate_probabilities, scenario_report
from .nn.checkpoint import load_checkpoint
from .nn.models import ARCHITECTURES, build_model, predict_proba
from .preprocess import normalize_bands, split_tile_ids
from .synth import SyntheticSceneParams, synth_dataset
from .training import (
    TileStore,
    TrainConfig,
    evaluate_split,
    fit_training_stats,
    train,
)

MIN_PERIOD_DAYS = 12  # sensor revisit floor; closer map pairs get a warning


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("FORESTSEG_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class RunConfig:
    """Merged, path-validated view of one training run's inputs."""

    manifest_path: Path
    run_dir: Path
    train_config: TrainConfig

    def validate(self) -> None:
        if not self.manifest_path.is_file():
            raise DataError(f"manifest {self.manifest_path} does not exist")
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigurationError(f"cannot create run directory: {e}") from e
        scenario_spec(self.train_config.scenario)


def _load_config_overrides(config_path, flags: dict) -> dict:
    """Apply config-file values on top of flag values (file wins)."""
    if config_path is None:
        return flags
    import yaml

    path = Path(config_path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        overrides = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"config file {path} is not valid YAML: {e}") from e
    if not isinstance(overrides, dict):
        raise ConfigurationError(f"config file {path} must hold a mapping")
    unknown = set(overrides) - set(flags)
    if unknown:
        raise ConfigurationError(
            f"config file {path} has unknown keys: {sorted(unknown)}"
        )
    merged = dict(flags)
    merged.update(overrides)
    return merged


def _parse_period_date(period: str):
    for fmt in ("%Y-%m-%d", "%Y-%m", "%Y"):
        try:
            return datetime.datetime.strptime(period, fmt).date()
        except ValueError:
            continue
    return None


def _ensure_split(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    if manifest.has_split():
        return manifest
    assignment = split_tile_ids(manifest.tile_ids(), seed=seed)
    return manifest.with_split(assignment)


@click.group()
@click.version_option(version=__version__, prog_name="forestseg")
def cli():
    """Forest segmentation and deforestation mapping pipeline."""


@cli.command()
@click.option("--root", required=True, type=click.Path(), help="Dataset directory.")
@click.option("--out", type=click.Path(), default=None,
              help="Manifest destination (default: <root>/manifest.tsv).")
def ingest(root, out):
    """Index a tile directory into a manifest, skipping incomplete tiles."""
    manifest = build_manifest(root)
    for skip in manifest.skipped:
        click.echo(f"skip {skip.period}/{skip.tile_id}: {skip.reason}", err=True)
    if not manifest.entries:
        raise DataError(f"no complete tiles found under {root}")
    out = Path(out) if out else Path(root) / "manifest.tsv"
    write_manifest(manifest, out)
    click.echo(
        f"indexed {len(manifest.entries)} tile entries "
        f"({len(manifest.skipped)} skipped) -> {out}"
    )


@cli.command()
@click.option("--out", required=True, type=click.Path(), help="Dataset root to create.")
@click.option("--tiles", default=50, show_default=True, help="Tiles per period.")
@click.option("--tile-px", default=64, show_default=True)
@click.option("--periods", default="2019", show_default=True,
              help="Comma-separated period labels.")
@click.option("--forest-fraction", default=0.7, show_default=True)
@click.option("--cloud-fraction", default=0.0, show_default=True)
@click.option("--deforest-fraction", default=0.0, show_default=True,
              help="Forest share cleared between consecutive periods.")
@click.option("--blob-scale", default=8.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=None, type=int,
              help="Tile-generation threads (default: $FORESTSEG_WORKERS or 1).")
def synth(out, tiles, tile_px, periods, forest_fraction, cloud_fraction,
          deforest_fraction, blob_scale, seed, workers):
    """Generate a synthetic dataset in the ingestion layout."""
    params = SyntheticSceneParams(
        seed=seed,
        tile_px=tile_px,
        forest_fraction=forest_fraction,
        cloud_fraction=cloud_fraction,
        blob_scale=blob_scale,
    )
    period_list = tuple(p.strip() for p in periods.split(",") if p.strip())
    if not period_list:
        raise ConfigurationError("need at least one period label")
    out_path = Path(out)
    try:
        out_path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigurationError(f"cannot create output root: {e}") from e
    result = synth_dataset(
        out_path,
        tiles,
        params,
        periods=period_list,
        deforest_fraction=deforest_fraction,
        workers=workers or _default_workers(),
    )
    click.echo(
        f"wrote {result['tiles']} tiles x {result['periods']} period(s) under {out_path}"
    )


def _hyper_options(include_arch_scenario: bool):
    opts = []
    if include_arch_scenario:
        opts += [
            click.option("--arch", default="unet", show_default=True,
                         type=click.Choice(sorted(ARCHITECTURES))),
            click.option("--scenario", default="S1", show_default=True,
                         type=click.Choice(sorted(SCENARIOS))),
        ]
    opts += [
        click.option("--period", default="2019", show_default=True,
                     help="Training period label."),
        click.option("--epochs", default=50, show_default=True),
        click.option("--batch-size", default=32, show_default=True),
        click.option("--learning-rate", default=1e-4, show_default=True),
        click.option("--base-width", default=16, show_default=True),
        click.option("--depth", default=4, show_default=True),
        click.option("--seed", default=0, show_default=True),
        click.option("--threshold", default=0.5, show_default=True),
        click.option("--no-augment", is_flag=True, default=False),
    ]

    def wrap(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn

    return wrap


def _train_config_from_flags(flags: dict) -> TrainConfig:
    return TrainConfig(
        arch=flags["arch"],
        scenario=flags["scenario"],
        period=flags["period"],
        learning_rate=flags["learning_rate"],
        batch_size=flags["batch_size"],
        epochs=flags["epochs"],
        seed=flags["seed"],
        base_width=flags["base_width"],
        depth=flags["depth"],
        threshold=flags["threshold"],
        augment=not flags["no_augment"],
    )


def _run_training(manifest: DatasetManifest, tc: TrainConfig, run_dir: Path, echo):
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = _ensure_split(manifest, tc.seed)
    manifest_copy = run_dir / "manifest.tsv"
    write_manifest(manifest, manifest_copy)
    manifest = read_manifest(manifest_copy)
    store = TileStore(manifest, tc.spec)
    stats = fit_training_stats(store, tc.period, tc.normalization_orientation)
    model = build_model(tc.model_config())
    (run_dir / "train_config.json").write_text(
        json.dumps(tc.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    model, history = train(
        model, manifest, stats, tc.policy(), tc, run_dir=run_dir, log=echo
    )
    return model, stats, history, manifest


@cli.command(name="train")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "run_dir", required=True, type=click.Path(),
              help="Run directory for checkpoints, history and reports.")
@_hyper_options(include_arch_scenario=True)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML file whose keys override these flags.")
def train_cmd(manifest_path, run_dir, config_path, **flags):
    """Train one (architecture, scenario) model."""
    flags = _load_config_overrides(config_path, flags)
    tc = _train_config_from_flags(flags)
    run = RunConfig(Path(manifest_path), Path(run_dir), tc)
    run.validate()
    manifest = read_manifest(run.manifest_path)
    model, stats, history, manifest = _run_training(
        manifest, tc, run.run_dir, lambda msg: click.echo(msg)
    )
    best = history.best_epoch()
    click.echo(
        f"done: best val_f1 {best.val_f1:.4f} at epoch {best.epoch + 1}; "
        f"checkpoint -> {run.run_dir / 'checkpoint_best.ckpt'}"
    )


def _evaluate_checkpoint(model, stats, tc: TrainConfig, manifest, period, split):
    store = TileStore(manifest, tc.spec)
    loss, counts, f1, probs, targets = evaluate_split(
        model, store, stats, period, split, tc, collect_probs=True
    )
    report = evaluate_probabilities(probs, targets, threshold=tc.threshold)
    return MetricReport(
        accuracy=report.accuracy,
        precision=report.precision,
        recall=report.recall,
        f1=report.f1,
        auc_pr=report.auc_pr,
        degenerate=report.degenerate,
        classifier=tc.arch,
        scenario=tc.scenario,
        period=period,
    )


@cli.command(name="eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--period", "periods", multiple=True, required=True,
              help="Evaluation period label; repeatable.")
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "val", "test"]))
@click.option("--out", "out_dir", required=True, type=click.Path())
def eval_cmd(checkpoint, manifest_path, periods, split, out_dir):
    """Score a checkpoint on the chosen split of one or more periods."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, stats, meta = load_checkpoint(checkpoint)
    if stats is None:
        raise DataError("checkpoint carries no normalization stats")
    tc = TrainConfig.from_dict(meta["train_config"])
    manifest = _ensure_split(read_manifest(manifest_path), tc.seed)
    rows = []
    for period in periods:
        row = _evaluate_checkpoint(model, stats, tc, manifest, period, split)
        rows.append(row)
        name = f"metrics_{tc.arch}_{tc.scenario}_{period}"
        table = scenario_report([row])
        table.write_csv(out_dir / f"{name}.csv")
        table.write_markdown(out_dir / f"{name}.md")
        click.echo(
            f"{period}: accuracy {row.accuracy:.4f}  precision {row.precision:.4f}  "
            f"recall {row.recall:.4f}  f1 {row.f1:.4f}  auc_pr {row.auc_pr:.4f}"
        )
    if len(rows) > 1:
        combined = scenario_report(rows)
        combined.write_csv(out_dir / "metrics_all.csv")
        combined.write_markdown(out_dir / "metrics_all.md")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--period-a", required=True, help="Earlier period label.")
@click.option("--period-b", required=True, help="Later period label.")
@click.option("--threshold", default=None, type=float,
              help="Binarization threshold (default: the training setting).")
@click.option("--out", "out_dir", required=True, type=click.Path())
def detect(checkpoint, manifest_path, period_a, period_b, threshold, out_dir):
    """Map deforestation between two periods and estimate the cleared area."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, stats, meta = load_checkpoint(checkpoint)
    if stats is None:
        raise DataError("checkpoint carries no normalization stats")
    tc = TrainConfig.from_dict(meta["train_config"])
    tau = threshold if threshold is not None else tc.threshold
    manifest = read_manifest(manifest_path)

    da, db = _parse_period_date(period_a), _parse_period_date(period_b)
    if da and db and abs((db - da).days) < MIN_PERIOD_DAYS:
        click.echo(
            f"warning: periods are {abs((db - da).days)} days apart, below the "
            f"~{MIN_PERIOD_DAYS}-day sensor revisit floor; maps may alias",
            err=True,
        )

    shared = sorted(
        set(manifest.tile_ids(period_a)) & set(manifest.tile_ids(period_b))
    )
    if not shared:
        raise DataError(
            f"no tiles present in both periods {period_a!r} and {period_b!r}"
        )
    total: AreaEstimate | None = None
    for tile_id in shared:
        masks = {}
        base_chip = None
        for period in (period_a, period_b):
            entry = manifest.entry(tile_id, period)
            features, _ = load_tile(manifest, entry, tc.spec)
            if period == period_b:
                base_chip = features
            x = normalize_bands(features.bands, tc.spec.bands, stats)
            probs = predict_proba(model, x.transpose(2, 0, 1)[None])[0, 0]
            masks[period] = BinaryMask(grid=features.grid, labels=binarize(probs, tau))
        change = detect_change(masks[period_a], masks[period_b])
        est = area_estimate(change)
        total = est if total is None else total + est
        write_change_raster(out_dir / "changemaps" / f"{tile_id}.npz", change)
        save_overlay(out_dir / "overlays" / f"{tile_id}.png", base_chip, change)

    report = total.to_dict()
    report["period_a"] = period_a
    report["period_b"] = period_b
    report["tiles"] = len(shared)
    (out_dir / "area_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    rate = f"{total.deforestation_rate:.4%}" if total.rate_defined else "undefined"
    summary = (
        f"deforested {total.deforested_km2:.4f} km^2, afforested "
        f"{total.afforested_km2:.4f} km^2 across {len(shared)} tiles; "
        f"rate vs {period_a} forest: {rate}"
    )
    (out_dir / "area_report.txt").write_text(summary + "\n")
    click.echo(summary)


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--archs", default=",".join(sorted(ARCHITECTURES)), show_default=True)
@click.option("--scenarios", default=",".join(sorted(SCENARIOS)), show_default=True)
@click.option("--eval-period", "eval_periods", multiple=True,
              help="Evaluation period; repeatable (default: the training period).")
@_hyper_options(include_arch_scenario=False)
@click.option("--config", "config_path", type=click.Path(), default=None)
def sweep(manifest_path, out_dir, archs, scenarios, eval_periods, config_path,
          **flags):
    """Train and evaluate every architecture x scenario combination."""
    flags = _load_config_overrides(config_path, flags)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arch_list = [a.strip() for a in archs.split(",") if a.strip()]
    scenario_list = [s.strip() for s in scenarios.split(",") if s.strip()]
    for a in arch_list:
        if a not in ARCHITECTURES:
            raise ConfigurationError(f"unknown arch {a!r}")
    for s in scenario_list:
        if s not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {s!r}")
    periods = tuple(eval_periods) or (flags["period"],)
    base_manifest = _ensure_split(read_manifest(manifest_path), flags["seed"])
    rows = []
    for arch in arch_list:
        for scenario in scenario_list:
            run_flags = dict(flags, arch=arch, scenario=scenario)
            tc = _train_config_from_flags(run_flags)
            run_dir = out_dir / "runs" / f"{arch}_{scenario}"
            click.echo(f"[sweep] training {arch} / {scenario}")
            model, stats, history, manifest = _run_training(
                base_manifest, tc, run_dir, None
            )
            for period in periods:
                row = _evaluate_checkpoint(model, stats, tc, manifest, period, "test")
                rows.append(row)
                click.echo(
                    f"[sweep] {arch}/{scenario}/{period}: f1 {row.f1:.4f} "
                    f"auc_pr {row.auc_pr:.4f}"
                )
    table = scenario_report(rows)
    table.write_csv(out_dir / "comparison.csv")
    table.write_markdown(out_dir / "comparison.md")
    click.echo(f"comparison report -> {out_dir / 'comparison.md'}")


def main(argv=None):
    try:
        cli(args=argv, standalone_mode=False)
    except PipelineError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(e.exit_code)
    except click.ClickException as e:
        e.show()
        sys.exit(2)
    except click.exceptions.Abort:
        sys.exit(130)
    return 0


if __name__ == "__main__":
    main()
