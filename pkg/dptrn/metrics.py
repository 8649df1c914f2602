"""Classification metrics: accuracy, macro recall/F1, confusion and seed aggregation."""

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from sklearn import metrics as skm

from .errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

SUMMARY_METRICS = ("accuracy", "macro_recall", "macro_f1")


@dataclass
class MetricSet:
    accuracy: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    absent_classes: List[int] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    def to_flat_dict(self) -> Dict[str, float]:
        return {name: float(getattr(self, name)) for name in SUMMARY_METRICS}

    def to_json_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = self.to_flat_dict()
        payload.update(
            n_samples=self.n_samples,
            confusion=self.confusion.tolist(),
            precision=self.precision.tolist(),
            recall=self.recall.tolist(),
            f1=self.f1.tolist(),
            absent_classes=list(self.absent_classes),
        )
        return payload


def to_predictions(outputs: np.ndarray) -> np.ndarray:
    """Argmax of logits (ties to the lowest class) or the predictions themselves."""
    outputs = np.asarray(outputs)
    if outputs.ndim == 2:
        return np.argmax(outputs, axis=1)
    return outputs.astype(np.int64)


def confusion_matrix(predictions: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Counts with rows = true class and columns = predicted class."""
    return skm.confusion_matrix(labels, predictions, labels=np.arange(n_classes)).astype(np.int64)


def evaluate(outputs: np.ndarray, labels: Sequence[int], n_classes: Optional[int] = None) -> MetricSet:
    """Metrics of logits [N, C] or predictions [N] against integer labels.

    Classes missing from the labels score recall 0 and are listed in
    `absent_classes`.
    """
    outputs = np.asarray(outputs)
    labels = np.asarray(labels, dtype=np.int64)
    predictions = to_predictions(outputs)
    if predictions.shape != labels.shape:
        raise DataError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    if labels.size == 0:
        raise DataError("Cannot evaluate an empty set of labels")
    if n_classes is None:
        n_classes = outputs.shape[1] if outputs.ndim == 2 else int(max(labels.max(), predictions.max())) + 1
    for what, values in (("label", labels), ("prediction", predictions)):
        if values.min() < 0 or values.max() >= n_classes:
            raise DataError(f"{what} out of range [0, {n_classes}): {values.min()}..{values.max()}")

    classes = np.arange(n_classes)
    confusion = confusion_matrix(predictions, labels, n_classes)
    precision, recall, f1, support = skm.precision_recall_fscore_support(
        labels, predictions, labels=classes, average=None, zero_division=0
    )
    absent = [int(c) for c in np.flatnonzero(support == 0)]
    if absent:
        logger.debug("Classes %s do not occur in the labels; their recall counts as 0", absent)
    return MetricSet(
        accuracy=float(skm.accuracy_score(labels, predictions)),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        confusion=confusion,
        precision=precision.astype(np.float64),
        recall=recall.astype(np.float64),
        f1=f1.astype(np.float64),
        absent_classes=absent,
    )


def detection_metrics(outputs: np.ndarray, labels: Sequence[int]) -> Dict[str, float]:
    """Binary fault-vs-normal view: every non-zero class counts as a fault."""
    predicted_fault = to_predictions(outputs) > 0
    true_fault = np.asarray(labels) > 0
    tn, fp, fn, tp = skm.confusion_matrix(true_fault, predicted_fault, labels=[False, True]).ravel().astype(np.float64)
    total = tp + fp + fn + tn
    recall = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "detection_accuracy": float((tp + tn) / total) if total else 0.0,
        "detection_recall": float(recall),
        "detection_precision": float(precision),
        "detection_f1": float(f1),
        "false_alarm_rate": float(fp / (fp + tn)) if fp + tn else 0.0,
    }


MetricLike = Union[MetricSet, Mapping[str, float]]


def aggregate_seeds(runs: Sequence[MetricLike], metrics: Sequence[str] = SUMMARY_METRICS) -> pd.DataFrame:
    """Best (max) and mean of each metric across runs; rows are metrics."""
    if not runs:
        raise ConfigurationError("aggregate_seeds needs at least one run")
    rows = [run.to_flat_dict() if isinstance(run, MetricSet) else dict(run) for run in runs]
    frame = pd.DataFrame(rows, columns=list(metrics))
    return pd.DataFrame({"best": frame.max(axis=0), "mean": frame.mean(axis=0)})


def write_metrics_json(payload: Mapping[str, Any], path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info("Metrics written to %s", path)
    return path


def write_metrics_csv(rows: Sequence[Mapping[str, Any]], path) -> Path:
    path = Path(path)
    pd.DataFrame(list(rows)).to_csv(path, index=False, lineterminator="\n")
    logger.info("Metrics written to %s", path)
    return path
