"""Evaluation measures: macro-average accuracy, multiclass log loss, model size."""

from __future__ import annotations

import csv
import json
import io
from dataclasses import dataclass, field

import numpy as np

LOG_LOSS_CLAMP = 1e-15


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(f"predictions {predictions.shape} vs labels {labels.shape}")
    if labels.size == 0:
        raise ValueError("empty label set")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("labels outside [0, n_classes)")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (labels, predictions), 1)
    return m


def per_class_accuracy(predictions, labels, n_classes: int) -> np.ndarray:
    """Recall per class; NaN for classes absent from the labels."""
    m = confusion_matrix(predictions, labels, n_classes)
    totals = m.sum(axis=1)
    with np.errstate(invalid="ignore"):
        return np.where(totals > 0, np.diag(m) / totals, np.nan)


def macro_accuracy(predictions, labels, n_classes: int) -> float:
    """Mean of per-class recalls over the classes present in the labels."""
    recalls = per_class_accuracy(predictions, labels, n_classes)
    present = ~np.isnan(recalls)
    return float(recalls[present].mean())


def log_loss(probs: np.ndarray, labels) -> float:
    """Mean negative log-probability of the true class, clamped to
    [1e-15, 1 - 1e-15] before the log."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValueError(f"probs {probs.shape} vs labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError("labels outside [0, n_classes)")
    p = np.clip(probs[np.arange(labels.size), labels], LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP)
    return float(-np.log(p).mean())


def human_size(n_bytes: int) -> str:
    """Binary units, one decimal: 19_823_400 -> '18.9 MiB'."""
    if n_bytes >= 1 << 20:
        return f"{n_bytes / (1 << 20):.1f} MiB"
    if n_bytes >= 1 << 10:
        return f"{n_bytes / (1 << 10):.1f} KiB"
    return f"{n_bytes} B"


def model_size(obj) -> tuple[int, str]:
    """(bytes, human string) for a Network or EnsembleBundle.

    Counts parameter tensors only (conv/dense weights and biases, BN affine
    terms) at 4 bytes each; running statistics and optimizer state excluded.
    """
    return obj.size_bytes(), human_size(obj.size_bytes())


@dataclass
class EvalReport:
    macro_accuracy: float
    log_loss: float
    per_class_accuracy: list[float]
    confusion: list[list[int]]
    model_size_bytes: int
    n_samples: int
    labels: list[str] = field(default_factory=list)
    run_id: str = ""
    model: str = ""

    @staticmethod
    def build(probs: np.ndarray, label_ids, n_classes: int,
              model_size_bytes: int, labels: list[str] | None = None,
              run_id: str = "", model: str = "") -> "EvalReport":
        label_ids = np.asarray(label_ids, dtype=np.int64)
        preds = np.argmax(probs, axis=1)
        recalls = per_class_accuracy(preds, label_ids, n_classes)
        return EvalReport(
            macro_accuracy=macro_accuracy(preds, label_ids, n_classes),
            log_loss=log_loss(probs, label_ids),
            per_class_accuracy=[float(r) for r in recalls],
            confusion=confusion_matrix(preds, label_ids, n_classes).tolist(),
            model_size_bytes=model_size_bytes,
            n_samples=int(label_ids.size),
            labels=labels or [],
            run_id=run_id,
            model=model,
        )

    def to_json(self) -> str:
        doc = {
            "run_id": self.run_id,
            "model": self.model,
            "macro_accuracy": self.macro_accuracy,
            "log_loss": self.log_loss,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion,
            "model_size_bytes": self.model_size_bytes,
            "model_size": human_size(self.model_size_bytes),
            "n_samples": self.n_samples,
            "labels": self.labels,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        doc = json.loads(text)
        return EvalReport(
            macro_accuracy=doc["macro_accuracy"],
            log_loss=doc["log_loss"],
            per_class_accuracy=doc["per_class_accuracy"],
            confusion=doc["confusion"],
            model_size_bytes=doc["model_size_bytes"],
            n_samples=doc["n_samples"],
            labels=doc.get("labels", []),
            run_id=doc.get("run_id", ""),
            model=doc.get("model", ""),
        )

    CSV_HEADER = ["run_id", "model", "macro_accuracy", "log_loss", "model_size_bytes"]

    def csv_row(self) -> list[str]:
        return [self.run_id, self.model, repr(self.macro_accuracy),
                repr(self.log_loss), str(self.model_size_bytes)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_HEADER)
        writer.writerow(self.csv_row())
        return buf.getvalue()
