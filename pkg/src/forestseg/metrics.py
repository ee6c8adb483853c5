"""Confusion statistics, threshold metrics, PR-curve area and scenario
comparison tables. Forest (label 1) is the positive class throughout, and
metrics are micro-pooled: counts are summed over all pixels of all tiles
before any ratio is taken.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .grids import BinaryMask

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "auc_pr")


def _labels(x) -> np.ndarray:
    if isinstance(x, BinaryMask):
        return x.labels
    return np.asarray(x)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.tn + other.tn,
            self.fn + other.fn,
        )


def binarize(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(probs) >= threshold).astype(np.uint8)


def confusion(pred, target) -> ConfusionCounts:
    p = _labels(pred)
    t = _labels(target)
    if p.shape != t.shape:
        raise DataError(f"prediction shape {p.shape} != target shape {t.shape}")
    for name, arr in (("prediction", p), ("target", t)):
        if not np.isin(arr, (0, 1)).all():
            raise DataError(f"{name} must be binary")
    p = p.astype(bool)
    t = t.astype(bool)
    return ConfusionCounts(
        tp=int((p & t).sum()),
        fp=int((p & ~t).sum()),
        tn=int((~p & ~t).sum()),
        fn=int((~p & t).sum()),
    )


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc_pr: float | None = None
    degenerate: tuple[str, ...] = ()
    classifier: str | None = None
    scenario: str | None = None
    period: str | None = None

    def values(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def metrics_from_counts(counts: ConfusionCounts) -> MetricReport:
    """Accuracy/precision/recall/F1 from pooled counts; zero-denominator
    ratios report 0 and are flagged."""
    if counts.total <= 0:
        raise DataError("cannot compute metrics over zero pixels")
    degenerate = []
    accuracy = (counts.tp + counts.tn) / counts.total
    if counts.tp + counts.fp > 0:
        precision = counts.tp / (counts.tp + counts.fp)
    else:
        precision = 0.0
        degenerate.append("precision")
    if counts.tp + counts.fn > 0:
        recall = counts.tp / (counts.tp + counts.fn)
    else:
        recall = 0.0
        degenerate.append("recall")
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate.append("f1")
    return MetricReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        degenerate=tuple(degenerate),
    )


def _pr_points(probs: np.ndarray, target: np.ndarray):
    """(recall, precision) operating points at every distinct score value,
    ordered by descending threshold (predicate: score >= threshold)."""
    order = np.argsort(probs, kind="mergesort")[::-1]
    scores = probs[order]
    hits = target[order]
    tp_cum = np.cumsum(hits)
    fp_cum = np.cumsum(1 - hits)
    # last index of every tie group = the point where threshold == that score
    boundary = np.nonzero(np.diff(scores))[0]
    idx = np.concatenate([boundary, [scores.size - 1]])
    tp = tp_cum[idx].astype(np.float64)
    fp = fp_cum[idx].astype(np.float64)
    recall = tp / tp_cum[-1]
    precision = tp / (tp + fp)
    return recall, precision


def auc_pr(probs, target, n_thresholds: int | None = None) -> float:
    """Area under the precision-recall curve by trapezoidal integration.

    By default the curve is evaluated at every distinct score (exact,
    rank-based, so any strictly monotone rescaling of the scores leaves the
    value unchanged). Passing ``n_thresholds`` switches to a uniform sweep
    over [0, 1] instead, which trades exactness for a fixed-size curve.

    The curve is anchored at recall 0 with the precision of the strictest
    operating point, and reaches recall 1 at threshold ~0 where precision
    equals the positive prevalence.
    """
    p = np.asarray(probs, dtype=np.float64).ravel()
    t = _labels(target).ravel()
    if p.shape != t.shape:
        raise DataError(f"probs shape {probs.shape} incompatible with target")
    if not np.isin(t, (0, 1)).all():
        raise DataError("target must be binary")
    t = t.astype(np.int64)
    if t.sum() == 0:
        raise DataError("AUC-PR is undefined without positive pixels")
    if n_thresholds is None:
        recall, precision = _pr_points(p, t)
    else:
        if n_thresholds < 2:
            raise DataError(f"need at least 2 thresholds, got {n_thresholds}")
        total_pos = t.sum()
        rec, prec = [], []
        for tau in np.linspace(1.0, 0.0, n_thresholds):
            pred = p >= tau
            predicted = int(pred.sum())
            if predicted == 0:
                continue  # no operating point at this threshold
            tp = int((pred & (t == 1)).sum())
            rec.append(tp / total_pos)
            prec.append(tp / predicted)
        recall = np.asarray(rec)
        precision = np.asarray(prec)
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[precision[0]], precision])
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) * 0.5))


def evaluate_probabilities(
    probs, target, threshold: float = 0.5, n_thresholds: int | None = None
) -> MetricReport:
    """Threshold metrics plus AUC-PR for one probability map."""
    p = np.asarray(probs)
    counts = confusion(binarize(p, threshold), target)
    report = metrics_from_counts(counts)
    return replace(report, auc_pr=auc_pr(p, target, n_thresholds))


# ---------------------------------------------------------------------------
# Scenario comparison tables


@dataclass
class ComparisonTable:
    """All (classifier, scenario, period) evaluations of a sweep."""

    rows: list[MetricReport]

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            if r.classifier is None or r.scenario is None or r.period is None:
                raise DataError(
                    "comparison rows need classifier, scenario and period set"
                )
            key = (r.classifier, r.scenario, r.period)
            if key in seen:
                raise DataError(f"duplicate evaluation for {key}")
            seen.add(key)
        if not self.rows:
            raise DataError("comparison table needs at least one run")

    def scenarios(self) -> list[str]:
        return sorted({r.scenario for r in self.rows})

    def periods(self, scenario: str) -> list[str]:
        return sorted({r.period for r in self.rows if r.scenario == scenario})

    def classifiers(self, scenario: str) -> list[str]:
        return sorted({r.classifier for r in self.rows if r.scenario == scenario})

    def best_flags(self) -> set[tuple[str, str, str, str]]:
        """(scenario, period, metric, classifier) tuples holding the column
        maximum within their scenario table."""
        flags = set()
        for scenario in self.scenarios():
            for period in self.periods(scenario):
                rows = [
                    r
                    for r in self.rows
                    if r.scenario == scenario and r.period == period
                ]
                for metric in METRIC_NAMES:
                    vals = [
                        (r.values()[metric], r.classifier)
                        for r in rows
                        if r.values()[metric] is not None
                    ]
                    if not vals:
                        continue
                    best = max(v for v, _ in vals)
                    for v, clf in vals:
                        if v == best:
                            flags.add((scenario, period, metric, clf))
        return flags

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scenario", "classifier", "period", *METRIC_NAMES])
            for r in sorted(
                self.rows, key=lambda r: (r.scenario, r.classifier, r.period)
            ):
                vals = [
                    "" if r.values()[m] is None else f"{r.values()[m]:.4f}"
                    for m in METRIC_NAMES
                ]
                writer.writerow([r.scenario, r.classifier, r.period, *vals])

    @classmethod
    def read_csv(cls, path) -> "ComparisonTable":
        rows = []
        with Path(path).open() as fh:
            for rec in csv.DictReader(fh):
                rows.append(
                    MetricReport(
                        accuracy=float(rec["accuracy"]),
                        precision=float(rec["precision"]),
                        recall=float(rec["recall"]),
                        f1=float(rec["f1"]),
                        auc_pr=float(rec["auc_pr"]) if rec["auc_pr"] else None,
                        classifier=rec["classifier"],
                        scenario=rec["scenario"],
                        period=rec["period"],
                    )
                )
        return cls(rows=rows)

    def write_markdown(self, path) -> None:
        """One table per scenario, metric columns grouped by period, best
        value per column in bold."""
        flags = self.best_flags()
        lines = ["# Scenario comparison", ""]
        for scenario in self.scenarios():
            periods = self.periods(scenario)
            lines.append(f"## Scenario {scenario}")
            lines.append("")
            header = ["Classifier"]
            for period in periods:
                header += [f"{m} ({period})" for m in METRIC_NAMES]
            lines.append("| " + " | ".join(header) + " |")
            lines.append("|" + "---|" * len(header))
            for clf in self.classifiers(scenario):
                cells = [clf]
                for period in periods:
                    row = next(
                        (
                            r
                            for r in self.rows
                            if r.scenario == scenario
                            and r.period == period
                            and r.classifier == clf
                        ),
                        None,
                    )
                    for metric in METRIC_NAMES:
                        if row is None or row.values()[metric] is None:
                            cells.append("-")
                            continue
                        text = f"{row.values()[metric]:.4f}"
                        if (scenario, period, metric, clf) in flags:
                            text = f"**{text}**"
                        cells.append(text)
                lines.append("| " + " | ".join(cells) + " |")
            lines.append("")
        Path(path).write_text("\n".join(lines))


def scenario_report(runs: list[MetricReport]) -> ComparisonTable:
    return ComparisonTable(rows=list(runs))
