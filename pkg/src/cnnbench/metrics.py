"""Confusion matrices, per-class rates and training curves.

Confusion matrices are laid out with **rows = predicted class** and
**columns = actual class**, so a column sum is the support of that class.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyMatrix, LabelOutOfRange, LengthMismatch


@dataclass
class ConfusionMatrix:
    class_names: list[str]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        m = len(self.class_names)
        if self.counts.shape != (m, m):
            raise ValueError(f"counts must be {m}x{m}, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def to_csv(self, path, config_hash=None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if config_hash:
                fh.write(f"# config_hash: {config_hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["predicted\\actual", *self.class_names])
            for name, row in zip(self.class_names, self.counts):
                w.writerow([name, *[int(v) for v in row]])
        return path

    @classmethod
    def from_csv(cls, path) -> "ConfusionMatrix":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
        names = rows[0][1:]
        return cls(names, np.array([[int(v) for v in r[1:]] for r in rows[1:]]))


def confusion_matrix(predicted: Sequence[int], actual: Sequence[int], m: int,
                     class_names: Sequence[str] | None = None) -> ConfusionMatrix:
    predicted = np.asarray(predicted, dtype=np.int64).ravel()
    actual = np.asarray(actual, dtype=np.int64).ravel()
    if len(predicted) != len(actual):
        raise LengthMismatch(f"{len(predicted)} predictions for {len(actual)} labels")
    for arr, what in ((predicted, "predicted"), (actual, "actual")):
        if arr.size and (arr.min() < 0 or arr.max() >= m):
            raise LabelOutOfRange(f"{what} labels must lie in [0, {m})")
    counts = np.zeros((m, m), dtype=np.int64)
    np.add.at(counts, (predicted, actual), 1)
    names = list(class_names) if class_names is not None else [str(i) for i in range(m)]
    return ConfusionMatrix(names, counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    return float(np.trace(cm.counts)) / cm.total


def _ratio(num, den, what, flags):
    if den == 0:
        flags.append(what)
        return 0.0
    return num / den


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    class_names: list[str]
    per_class: dict[str, ClassMetrics]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    total: int
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "per_class": {
                c: {"precision": round(v.precision, 6), "recall": round(v.recall, 6),
                    "f1": round(v.f1, 6), "support": int(v.support)}
                for c, v in self.per_class.items()
            },
            "accuracy": round(self.accuracy, 6),
            "macro_precision": round(self.macro_precision, 6),
            "macro_recall": round(self.macro_recall, 6),
            "macro_f1": round(self.macro_f1, 6),
            "total": self.total,
            "warnings": list(self.warnings),
        }

    def to_json(self, path, config_hash=None, **extra) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        d = self.to_dict()
        if config_hash:
            d["config_hash"] = config_hash
        d.update(extra)
        path.write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
        return path

    def render(self, title: str | None = None) -> str:
        """Text table in the Precision / Recall / F1-score / Support (N) layout."""
        names = [c.capitalize() for c in self.class_names]
        width = max(11, *(len(n) for n in names)) + 2
        lines = []
        if title:
            lines.append(title)
        lines.append(" " * 13 + "".join(n.rjust(width) for n in names))
        for label, key in (("Precision", "precision"), ("Recall", "recall"), ("F1-score", "f1")):
            vals = [percent(getattr(self.per_class[c], key)) for c in self.class_names]
            lines.append(label.ljust(13) + "".join(f"{v}%".rjust(width) for v in vals))
        lines.append("Support (N)".ljust(13)
                     + "".join(str(self.per_class[c].support).rjust(width) for c in self.class_names))
        lines.append(f"Accuracy     {percent(self.accuracy)}% ({self.accuracy:.6f})")
        lines.append("(confusion rows = predicted, columns = actual)")
        return "\n".join(lines) + "\n"


def per_class_metrics(cm: ConfusionMatrix) -> ClassificationReport:
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    counts = cm.counts
    flags: list[str] = []
    per = {}
    for c, name in enumerate(cm.class_names):
        tp = int(counts[c, c])
        fp = int(counts[c, :].sum()) - tp
        fn = int(counts[:, c].sum()) - tp
        p = _ratio(tp, tp + fp, f"precision[{name}]: no predictions of this class", flags)
        r = _ratio(tp, tp + fn, f"recall[{name}]: no samples of this class", flags)
        f1 = _ratio(2 * p * r, p + r, f"f1[{name}]: precision + recall = 0", flags)
        per[name] = ClassMetrics(p, r, f1, tp + fn)
    for msg in flags:
        warnings.warn(f"zero denominator, rate set to 0: {msg}", RuntimeWarning, stacklevel=2)
    vals = list(per.values())
    return ClassificationReport(
        class_names=list(cm.class_names),
        per_class=per,
        accuracy=accuracy(cm),
        macro_precision=float(np.mean([v.precision for v in vals])),
        macro_recall=float(np.mean([v.recall for v in vals])),
        macro_f1=float(np.mean([v.f1 for v in vals])),
        total=cm.total,
        warnings=flags,
    )


def percent(x: float) -> int:
    """Integer percent, rounding halves up (0.945 -> 95)."""
    return int((Decimal(repr(float(x))) * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def confusion_from_predictions(pm) -> ConfusionMatrix:
    """Confusion matrix of a :class:`~cnnbench.ensemble.PredictionMatrix` (argmax decisions)."""
    m = len(pm.class_names)
    return confusion_matrix(pm.predicted, pm.true_indices, m, pm.class_names)


@dataclass
class CurveSeries:
    metric: str
    split: str
    epochs: list[int]
    values: list[float]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise ValueError("curve epochs must be strictly increasing")

    def __len__(self):
        return len(self.epochs)


def curves(history) -> list[CurveSeries]:
    """train/val x loss/accuracy series from a training history."""
    recs = list(history.records)
    if not recs:
        raise ValueError("history is empty")
    epochs = [r.epoch for r in recs]
    out = []
    for metric in ("loss", "accuracy"):
        for split in ("train", "val"):
            out.append(CurveSeries(metric, split, epochs, [getattr(r, f"{split}_{metric}") for r in recs]))
    return out
