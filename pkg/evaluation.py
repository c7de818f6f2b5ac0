"""Classification metrics and confusion-matrix aggregation."""

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from logging_config import setup_logger

logger = setup_logger(__name__)

DEFAULT_LABELS = ("Baseline", "LooseScrew", "Crack")
PROBABILITY_TOLERANCE = 1e-4


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class
    labels: Tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion counts must be square, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        if len(self.labels) != counts.shape[0]:
            raise ValueError(f"{len(self.labels)} labels for a {counts.shape[0]}-class matrix")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", tuple(self.labels))

    @classmethod
    def empty(cls, labels: Sequence[str] = DEFAULT_LABELS) -> "ConfusionMatrix":
        return cls(np.zeros((len(labels), len(labels)), dtype=np.int64), tuple(labels))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.labels != other.labels:
            raise ValueError(f"cannot merge confusion matrices with labels {self.labels} and {other.labels}")
        return ConfusionMatrix(self.counts + other.counts, self.labels)

    def __radd__(self, other):
        # lets sum() start from 0
        if other == 0:
            return self
        return self.__add__(other)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ConfusionMatrix)
            and self.labels == other.labels
            and np.array_equal(self.counts, other.counts)
        )

    def __hash__(self):
        return hash((self.labels, self.counts.tobytes()))


def confusion(
    true_labels: Sequence[int],
    predicted_labels: Sequence[int],
    classes: int = 3,
    labels: Optional[Sequence[str]] = None,
) -> ConfusionMatrix:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape:
        raise ValueError(f"label arrays differ in shape: {true_labels.shape} vs {predicted_labels.shape}")
    for name, arr in (("true", true_labels), ("predicted", predicted_labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= classes):
            raise ValueError(f"{name} labels must lie in [0, {classes}), got range [{arr.min()}, {arr.max()}]")
    counts = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted_labels), 1)
    if labels is None:
        labels = DEFAULT_LABELS if classes == len(DEFAULT_LABELS) else tuple(str(c) for c in range(classes))
    return ConfusionMatrix(counts, tuple(labels))


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    precision_undefined: bool = False
    recall_undefined: bool = False


@dataclass
class MetricsReport:
    accuracy: float
    balanced_accuracy: float
    per_class: Dict[str, ClassMetrics]
    total: int
    roc_auc: Optional[float] = None
    roc_auc_excluded: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "roc_auc_ovr_macro": self.roc_auc,
            "roc_auc_excluded_classes": list(self.roc_auc_excluded),
            "total": self.total,
            "per_class": {
                name: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                    "precision_undefined": m.precision_undefined,
                    "recall_undefined": m.recall_undefined,
                }
                for name, m in self.per_class.items()
            },
        }


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    counts = cm.counts
    total = int(counts.sum())
    if total == 0:
        raise ValueError("cannot compute metrics from an empty confusion matrix")
    per_class: Dict[str, ClassMetrics] = {}
    recalls = []
    for c, name in enumerate(cm.labels):
        tp = int(counts[c, c])
        predicted = int(counts[:, c].sum())
        support = int(counts[c, :].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else float("nan")
        if support:
            recalls.append(recall)
        if support and precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        per_class[name] = ClassMetrics(
            precision=precision,
            recall=recall,
            f1=f1,
            support=support,
            precision_undefined=predicted == 0,
            recall_undefined=support == 0,
        )
        if predicted == 0:
            logger.warning(f"No predictions for class {name}; precision reported as 0")
    return MetricsReport(
        accuracy=float(np.trace(counts)) / total,
        balanced_accuracy=float(np.mean(recalls)),
        per_class=per_class,
        total=total,
    )


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    ranks = rankdata(scores, method="average")
    return (ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_auc_per_class(
    true_labels: Sequence[int],
    class_probabilities: np.ndarray,
) -> Tuple[Dict[int, float], List[int]]:
    """One-vs-rest AUC per class, plus the classes that could not be scored."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    probs = np.asarray(class_probabilities, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != true_labels.size:
        raise ValueError(f"probabilities must be N x C with N={true_labels.size}, got {probs.shape}")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=PROBABILITY_TOLERANCE):
        raise ValueError("probability rows must sum to 1")
    aucs, excluded = {}, []
    for c in range(probs.shape[1]):
        positive = true_labels == c
        if not positive.any() or positive.all():
            excluded.append(c)
            continue
        aucs[c] = float(_binary_auc(probs[:, c], positive))
    return aucs, excluded


def roc_auc_ovr_macro(true_labels: Sequence[int], class_probabilities: np.ndarray) -> float:
    aucs, excluded = roc_auc_per_class(true_labels, class_probabilities)
    if excluded:
        logger.warning(f"Classes {excluded} excluded from ROC-AUC: absent (or alone) in true labels")
    if not aucs:
        return float("nan")
    return float(np.mean(list(aucs.values())))


def evaluate_predictions(
    true_labels: Sequence[int],
    predicted_labels: Sequence[int],
    class_probabilities: Optional[np.ndarray] = None,
    classes: int = 3,
) -> Tuple[ConfusionMatrix, MetricsReport]:
    cm = confusion(true_labels, predicted_labels, classes)
    report = metrics_from_confusion(cm)
    if class_probabilities is not None and len(true_labels):
        aucs, excluded = roc_auc_per_class(true_labels, class_probabilities)
        report.roc_auc = float(np.mean(list(aucs.values()))) if aucs else float("nan")
        report.roc_auc_excluded = [cm.labels[c] for c in excluded]
    return cm, report


def format_percent(value: float, places: int = 2) -> str:
    """Half-up rounded percentage for presentation, e.g. 0.998311 -> '99.83'."""
    if value is None or np.isnan(value):
        return "n/a"
    quantum = Decimal(1).scaleb(-places)
    return str((Decimal(repr(float(value))) * 100).quantize(quantum, rounding=ROUND_HALF_UP))


def confusion_to_frame(cm: ConfusionMatrix) -> pd.DataFrame:
    frame = pd.DataFrame(cm.counts, index=list(cm.labels), columns=list(cm.labels))
    frame.index.name = "true\\predicted"
    return frame


def report_to_frame(report: MetricsReport, scope: str = "aggregate") -> pd.DataFrame:
    rows = [
        {"scope": scope, "class": "all", "metric": "accuracy", "value": report.accuracy},
        {"scope": scope, "class": "all", "metric": "balanced_accuracy", "value": report.balanced_accuracy},
        {"scope": scope, "class": "all", "metric": "roc_auc_ovr_macro", "value": report.roc_auc},
    ]
    for name, m in report.per_class.items():
        for metric in ("precision", "recall", "f1", "support"):
            rows.append({"scope": scope, "class": name, "metric": metric, "value": getattr(m, metric)})
    return pd.DataFrame(rows)


def write_metrics(report: MetricsReport, directory: Path, per_fold: Optional[Dict[str, MetricsReport]] = None) -> None:
    """metrics.json and metrics.csv, aggregate first then one scope per fold."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    per_fold = per_fold or {}
    payload = {
        "aggregate": report.to_dict(),
        "folds": {tag: r.to_dict() for tag, r in per_fold.items()},
    }
    with open(directory / "metrics.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, allow_nan=True)
    frames = [report_to_frame(report)] + [report_to_frame(r, tag) for tag, r in per_fold.items()]
    pd.concat(frames, ignore_index=True).to_csv(directory / "metrics.csv", index=False)
