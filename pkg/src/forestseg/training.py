"""Class-weighted binary cross-entropy training loop.

Defaults follow the reference recipe: Adam at learning rate 1e-4, batch size
32, 50 epochs, misclassification weights 0.7 for non-forest and 0.3 for
forest (the labels run roughly 3:1 in favour of forest, so the loss weights
are inversely proportional to prevalence). Desk-scale overrides are plain
config fields.

Each epoch shuffles the training tiles with a seeded generator, assembles the
scenario bands, normalizes with the training-split percentiles, augments, and
steps the optimizer; validation runs unaugmented and the best-validation-F1
parameters are checkpointed.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, ScenarioSpec, load_tile, scenario_spec
from .errors import ConfigurationError, DataError, NumericalError
from .metrics import ConfusionCounts, binarize, confusion, metrics_from_counts
from .nn import ops
from .nn.autodiff import Tensor, backward, no_grad
from .nn.checkpoint import save_checkpoint
from .nn.models import ModelConfig, SegmentationModel
from .nn.optim import Adam
from .preprocess import (
    AugmentationPolicy,
    NormalizationStats,
    apply_draw,
    draw_augment,
    fit_percentiles,
    normalize_bands,
)


def weighted_bce(
    pred: np.ndarray,
    target: np.ndarray,
    w_pos: float = 0.3,
    w_neg: float = 0.7,
    eps: float = 1e-7,
) -> float:
    """Mean class-weighted binary cross-entropy of a probability map.

    loss = -mean(w_pos * y * log(p) + w_neg * (1 - y) * log(1 - p)) with p
    clamped to [eps, 1 - eps].
    """
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target)
    if p.shape != y.shape:
        raise DataError(f"prediction shape {p.shape} != target shape {y.shape}")
    if p.size == 0:
        raise DataError("empty prediction")
    if p.min() < 0.0 or p.max() > 1.0:
        raise DataError(
            f"predictions must be probabilities in [0, 1]; "
            f"got range [{p.min()}, {p.max()}]"
        )
    if not np.isin(y, (0, 1)).all():
        raise DataError("target must be binary")
    with no_grad():
        loss = ops.weighted_bce_loss(Tensor(p), y.astype(np.float64), w_pos, w_neg, eps)
    return float(loss.data)


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "unet"
    scenario: str = "S1"
    period: str = "2019"
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 50
    w_pos: float = 0.3
    w_neg: float = 0.7
    seed: int = 0
    base_width: int = 16
    depth: int = 4
    threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    augment: bool = True
    flip_h: bool = True
    flip_v: bool = True
    max_shift_fraction: float = 0.10
    max_rotation_deg: float = 180.0
    normalization_orientation: str = "as_printed"

    def __post_init__(self):
        if abs(self.w_pos + self.w_neg - 1.0) > 1e-9:
            raise ConfigurationError(
                f"class weights must sum to 1, got {self.w_pos} + {self.w_neg}"
            )
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"threshold must lie in (0, 1), got {self.threshold}")

    @property
    def spec(self) -> ScenarioSpec:
        return scenario_spec(self.scenario)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            arch=self.arch,
            in_channels=self.spec.channels,
            base_width=self.base_width,
            depth=self.depth,
            seed=self.seed,
        )

    def policy(self) -> AugmentationPolicy:
        if not self.augment:
            return AugmentationPolicy.disabled()
        return AugmentationPolicy(
            flip_h=self.flip_h,
            flip_v=self.flip_v,
            max_shift_fraction=self.max_shift_fraction,
            max_rotation_deg=self.max_rotation_deg,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_f1: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def best_epoch(self) -> EpochRecord:
        return max(self.records, key=lambda r: r.val_f1)

    def write_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_loss,val_f1,seconds"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.train_loss:.8f},{r.val_loss:.8f},"
                f"{r.val_f1:.8f},{r.seconds:.3f}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


class TileStore:
    """Loads scenario features + masks from a manifest, with an in-memory
    cache (tiles at desk scale are small)."""

    def __init__(self, manifest: DatasetManifest, spec: ScenarioSpec):
        self.manifest = manifest
        self.spec = spec
        self._cache: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = {}

    def entries(self, period: str, split: str | None = None):
        return sorted(
            self.manifest.select(period=period, split=split),
            key=lambda e: e.tile_id,
        )

    def load(self, entry) -> tuple[np.ndarray, np.ndarray]:
        key = (entry.tile_id, entry.period)
        if key not in self._cache:
            features, mask = load_tile(self.manifest, entry, self.spec)
            self._cache[key] = (features.bands, mask.labels)
        return self._cache[key]


def fit_training_stats(
    store: TileStore, period: str, orientation: str = "as_printed"
) -> NormalizationStats:
    """Percentiles pooled over the training split only (no leakage)."""
    train_entries = store.entries(period, "train")
    if not train_entries:
        raise DataError(f"no training tiles for period {period!r}")
    chips = (
        _BandsOnly(store.load(e)[0], store.spec.bands) for e in train_entries
    )
    return fit_percentiles(chips, orientation=orientation)


class _BandsOnly:
    """Duck-typed chip carrying only what fit_percentiles needs."""

    def __init__(self, bands, band_names):
        self.bands = bands
        self.band_names = tuple(band_names)


def _batch_arrays(
    store: TileStore,
    entries,
    stats: NormalizationStats,
    policy: AugmentationPolicy | None,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for e in entries:
        bands, labels = store.load(e)
        bands = normalize_bands(bands, store.spec.bands, stats)
        if policy is not None and rng is not None:
            draw = draw_augment(policy, rng, labels.shape)
            bands, labels = apply_draw(bands, labels, draw)
        xs.append(bands.transpose(2, 0, 1))
        ys.append(labels)
    x = np.ascontiguousarray(np.stack(xs), dtype=np.float32)
    y = np.stack(ys).astype(np.float32)[:, None, :, :]
    return x, y


def evaluate_split(
    model: SegmentationModel,
    store: TileStore,
    stats: NormalizationStats,
    period: str,
    split: str | None,
    config: TrainConfig,
    batch_size: int | None = None,
    collect_probs: bool = False,
):
    """Unaugmented evaluation over one split: mean loss, pooled confusion,
    F1, and optionally the pooled probability/target vectors (for AUC)."""
    from .nn.models import predict_proba

    entries = store.entries(period, split)
    if not entries:
        raise DataError(f"no tiles for period {period!r} split {split!r}")
    bs = batch_size or config.batch_size
    counts = ConfusionCounts()
    losses = []
    probs_all, targets_all = [], []
    for i in range(0, len(entries), bs):
        x, y = _batch_arrays(store, entries[i : i + bs], stats, None, None)
        probs = predict_proba(model, x)
        losses.append(
            weighted_bce(probs, y, config.w_pos, config.w_neg) * len(y)
        )
        counts = counts + confusion(binarize(probs, config.threshold), y.astype(np.uint8))
        if collect_probs:
            probs_all.append(probs.ravel())
            targets_all.append(y.ravel().astype(np.uint8))
    loss = float(sum(losses) / len(entries))
    f1 = metrics_from_counts(counts).f1
    if collect_probs:
        return loss, counts, f1, np.concatenate(probs_all), np.concatenate(targets_all)
    return loss, counts, f1


def train(
    model: SegmentationModel,
    manifest: DatasetManifest,
    stats: NormalizationStats,
    policy: AugmentationPolicy,
    config: TrainConfig,
    run_dir=None,
    log=None,
) -> tuple[SegmentationModel, TrainHistory]:
    """Run the optimization loop; returns the best-validation-F1 model.

    Deterministic for a fixed (manifest, seed) up to floating-point reduction
    order: epoch shuffles derive from (seed, epoch) and per-batch augmentation
    draws from (seed, epoch, batch index).
    """
    if not manifest.has_split():
        raise DataError("manifest has no split assignment; split the dataset first")
    store = TileStore(manifest, config.spec)
    train_entries = store.entries(config.period, "train")
    val_entries = store.entries(config.period, "val")
    if not train_entries or not val_entries:
        raise DataError(
            f"period {config.period!r} needs non-empty train and val splits; "
            f"got {len(train_entries)}/{len(val_entries)} tiles"
        )
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    optimizer = Adam(
        model.named_parameters(),
        lr=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
    )
    history = TrainHistory()
    best_f1 = -1.0
    best_params = None
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        model.train(True)
        epoch_rng = np.random.default_rng([config.seed, epoch])
        order = epoch_rng.permutation(len(train_entries))
        shuffled = [train_entries[i] for i in order]
        losses = []
        for bi in range(0, len(shuffled), config.batch_size):
            batch = shuffled[bi : bi + config.batch_size]
            batch_rng = np.random.default_rng(
                [config.seed, epoch, bi // config.batch_size]
            )
            x, y = _batch_arrays(
                store, batch, stats, policy if config.augment else None, batch_rng
            )
            optimizer.zero_grad()
            probs = model(Tensor(x))
            loss = ops.weighted_bce_loss(probs, y, config.w_pos, config.w_neg)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch "
                    f"{bi // config.batch_size}"
                )
            backward(loss)
            optimizer.step()
            losses.append(loss_val * len(batch))
        train_loss = float(sum(losses) / len(shuffled))
        val_loss, _, val_f1 = evaluate_split(
            model, store, stats, config.period, "val", config
        )
        seconds = time.perf_counter() - t0
        history.records.append(
            EpochRecord(epoch, train_loss, val_loss, val_f1, seconds)
        )
        if log:
            log(
                f"epoch {epoch + 1}/{config.epochs}  train_loss {train_loss:.4f}  "
                f"val_loss {val_loss:.4f}  val_f1 {val_f1:.4f}  ({seconds:.1f}s)"
            )
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_params = {
                k: p.data.copy() for k, p in model.named_parameters().items()
            }
            best_buffers = {
                k: b.copy() for k, b in model.named_buffers().items()
            }
            if run_dir is not None:
                save_checkpoint(
                    run_dir / "checkpoint_best.ckpt",
                    model,
                    stats,
                    meta={
                        "train_config": config.to_dict(),
                        "best_epoch": epoch,
                        "best_val_f1": val_f1,
                    },
                )
    # Leave the best-validation weights in the returned model.
    if best_params is not None:
        for k, p in model.named_parameters().items():
            p.data = best_params[k]
        for k, b in model.named_buffers().items():
            np.copyto(b, best_buffers[k])
    if run_dir is not None:
        history.write_csv(run_dir / "history.csv")
        stats.save(run_dir / "normalization_stats.json")
    return model, history
