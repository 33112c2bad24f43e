"""Confusion matrices, macro P/R/F1, baselines, and relative improvement."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = gold, columns = predicted
    labels: tuple

    @property
    def k(self) -> int:
        return len(self.labels)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path) -> None:
        rows = ["gold\\pred," + ",".join(self.labels)]
        for lab, row in zip(self.labels, self.counts):
            rows.append(lab + "," + ",".join(str(int(v)) for v in row))
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class MetricsReport:
    labels: tuple
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    n: int
    accuracy: float

    @property
    def k(self) -> int:
        return len(self.labels)

    @property
    def macro(self) -> tuple[float, float, float]:
        return float(self.precision.mean()), float(self.recall.mean()), float(self.f1.mean())

    def to_dict(self) -> dict:
        """All metrics as percentages with one decimal."""
        pct = lambda v: round(100.0 * float(v), 1)  # noqa: E731
        P, R, F = self.macro
        return {
            "k": self.k,
            "n": self.n,
            "accuracy": pct(self.accuracy),
            "macro": {"precision": pct(P), "recall": pct(R), "f1": pct(F)},
            "per_class": [
                {"label": lab, "precision": pct(p), "recall": pct(r), "f1": pct(f)}
                for lab, p, r, f in zip(self.labels, self.precision, self.recall, self.f1)
            ],
        }


def confusion_counts(gold: np.ndarray, pred: np.ndarray, k: int) -> np.ndarray:
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape:
        raise ValueError(f"length mismatch: {gold.size} gold vs {pred.size} predicted")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (gold, pred), 1)
    return cm


def confusion_matrix(gold: Sequence[str], pred: Sequence[str], vocab) -> ConfusionMatrix:
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    labels = tuple(vocab.labels if hasattr(vocab, "labels") else vocab)
    index = {lab: i for i, lab in enumerate(labels)}
    g = np.array([index[x] for x in gold], dtype=np.int64)
    p = np.array([index[x] for x in pred], dtype=np.int64)
    return ConfusionMatrix(confusion_counts(g, p, len(labels)), labels)


def normalize_rows(cm) -> np.ndarray:
    counts = np.asarray(getattr(cm, "counts", cm), dtype=np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def _safe_div(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.divide(a, b, out=np.zeros_like(a), where=b > 0)


def per_class_prf(cm):
    """Per-class (P, R, F1) arrays; every 0/0 is taken as 0."""
    counts = np.asarray(getattr(cm, "counts", cm))
    tp = np.diag(counts).astype(np.float64)
    P = _safe_div(tp, counts.sum(axis=0))
    R = _safe_div(tp, counts.sum(axis=1))
    F = _safe_div(2 * P * R, P + R)
    return P, R, F


def macro_prf(cm) -> tuple[float, float, float]:
    P, R, F = per_class_prf(cm)
    return float(P.mean()), float(R.mean()), float(F.mean())


def macro_f1(gold_idx, pred_idx, k: int) -> float:
    return macro_prf(confusion_counts(gold_idx, pred_idx, k))[2]


def metrics_report(cm: ConfusionMatrix) -> MetricsReport:
    P, R, F = per_class_prf(cm)
    n = cm.total
    acc = float(np.trace(cm.counts) / n) if n else 0.0
    return MetricsReport(cm.labels, P, R, F, n, acc)


def evaluate_indices(gold_idx, pred_idx, labels) -> tuple[ConfusionMatrix, MetricsReport]:
    cm = ConfusionMatrix(confusion_counts(gold_idx, pred_idx, len(labels)), tuple(labels))
    return cm, metrics_report(cm)


class MajorityBaseline:
    """Always predicts the most frequent training label (ties: lower vocab index)."""

    def __init__(self, train_labels, k: int):
        train_labels = np.asarray(train_labels, dtype=np.int64)
        if train_labels.size == 0:
            raise ValueError("majority baseline needs a non-empty training set")
        self.label = int(np.argmax(np.bincount(train_labels, minlength=k)))
        self.k = k

    def predict(self, n: int) -> np.ndarray:
        return np.full(n, self.label, dtype=np.int64)


class WeightedRandomBaseline:
    """Samples labels i.i.d. from the training label distribution."""

    def __init__(self, train_labels, k: int, seed: int = 0):
        train_labels = np.asarray(train_labels, dtype=np.int64)
        if train_labels.size == 0:
            raise ValueError("weighted random baseline needs a non-empty training set")
        counts = np.bincount(train_labels, minlength=k).astype(np.float64)
        self.probs = counts / counts.sum()
        self.k = k
        self.seed = seed

    def predict(self, n: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.choice(self.k, size=n, p=self.probs).astype(np.int64)


def majority_baseline(train_labels, k: int) -> MajorityBaseline:
    return MajorityBaseline(train_labels, k)


def weighted_random_baseline(train_labels, k: int, seed: int = 0) -> WeightedRandomBaseline:
    return WeightedRandomBaseline(train_labels, k, seed)


def relative_improvement(new: float, base: float) -> float:
    """Percentage improvement of ``new`` over ``base``, rounded to one decimal."""
    if base <= 0:
        raise ValueError("base must be positive")
    return round(100.0 * (new - base) / base, 1)


def write_confusion_pgm(cm, path, cell: int = 16) -> None:
    from .vision import write_pgm

    norm = normalize_rows(cm)
    img = np.rint(norm * 255).astype(np.uint8)
    write_pgm(path, np.kron(img, np.ones((cell, cell), dtype=np.uint8)))


def write_report_json(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
