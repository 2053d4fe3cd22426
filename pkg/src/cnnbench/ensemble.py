"""Sum-of-probabilities ensembling of per-model prediction matrices.

For each sample the class scores of the ``n`` member models are added,
the sums are divided by their per-sample total (so each row sums to one)
and the class with the largest normalized sum wins. Dividing by a positive
per-row constant never changes the argmax, so this is the same decision as
taking ``argmax`` of the raw sums.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ClassSetMismatch,
    ConfigHashMismatch,
    LabelDisagreement,
    MemberMissing,
    SampleSetMismatch,
    ShapeMismatch,
    ZeroRow,
)

DIR_MEMBERS = ("DenseNet121", "InceptionV3", "ResNet18")


@dataclass
class PredictionMatrix:
    """Per-sample class probabilities produced by one model on one split.

    ``probs[r, i]`` is the score model ``model_id`` gives class ``i`` for
    sample ``r``; ``true_labels`` holds class names.
    """

    model_id: str
    sample_ids: list[str]
    class_names: list[str]
    probs: np.ndarray
    true_labels: list[str]
    config_hash: str | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        n = len(self.sample_ids)
        if self.probs.shape != (n, len(self.class_names)):
            raise ShapeMismatch(
                f"{self.model_id}: probs shape {self.probs.shape} != ({n}, {len(self.class_names)})")
        if len(self.true_labels) != n:
            raise ShapeMismatch(f"{self.model_id}: {len(self.true_labels)} labels for {n} samples")

    def __len__(self):
        return len(self.sample_ids)

    @property
    def true_indices(self) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.class_names)}
        return np.array([lookup[t] for t in self.true_labels], dtype=np.int64)

    @property
    def predicted(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    def check_simplex(self, atol: float = 1e-5) -> None:
        if len(self) and (np.any(self.probs < -atol) or np.any(self.probs > 1 + atol)):
            raise ValueError(f"{self.model_id}: probabilities outside [0, 1]")
        if len(self) and not np.allclose(self.probs.sum(axis=1), 1.0, atol=atol, rtol=0):
            raise ValueError(f"{self.model_id}: rows do not sum to 1")

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            _write_header_comments(fh, model_id=self.model_id, config_hash=self.config_hash)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "true_label", *[f"p_{c}" for c in self.class_names]])
            for sid, label, row in zip(self.sample_ids, self.true_labels, self.probs):
                w.writerow([sid, label, *[f"{v:.9f}" for v in row]])
        return path

    @classmethod
    def from_csv(cls, path, model_id: str | None = None) -> "PredictionMatrix":
        meta, header, rows = _read_commented_csv(path)
        if header[:2] != ["sample_id", "true_label"] or not all(h.startswith("p_") for h in header[2:]):
            raise ShapeMismatch(f"{path}: not a prediction matrix header: {header}")
        classes = [h[2:] for h in header[2:]]
        probs = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64).reshape(len(rows), len(classes))
        return cls(
            model_id=model_id or meta.get("model_id") or Path(path).stem,
            sample_ids=[r[0] for r in rows],
            class_names=classes,
            probs=probs,
            true_labels=[r[1] for r in rows],
            config_hash=meta.get("config_hash"),
        )


def _write_header_comments(fh, **meta):
    for key, value in meta.items():
        if value is not None:
            fh.write(f"# {key}: {value}\n")


def _read_commented_csv(path):
    meta, lines = {}, []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            else:
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    return meta, header, [r for r in reader if r]


@dataclass(frozen=True)
class EnsembleSpec:
    name: str = "DIR"
    members: tuple[str, ...] = DIR_MEMBERS
    weights: tuple[float, ...] | None = None
    aggregation: str = "sum_of_probabilities"

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"duplicate ensemble members: {self.members}")
        if self.weights is not None and len(self.weights) != len(self.members):
            raise ValueError("one weight per member required")
        if self.aggregation != "sum_of_probabilities":
            raise ValueError(f"unsupported aggregation {self.aggregation!r}")

    @property
    def member_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(len(self.members))
        return np.asarray(self.weights, dtype=np.float64)


@dataclass
class EnsembleResult:
    sample_ids: list[str]
    class_names: list[str]
    raw_sums: np.ndarray
    normalized: np.ndarray
    predicted: np.ndarray
    true_labels: list[str] = field(default_factory=list)
    name: str = "ensemble"
    config_hash: str | None = None

    def to_prediction_matrix(self) -> PredictionMatrix:
        return PredictionMatrix(self.name, list(self.sample_ids), list(self.class_names),
                                self.normalized.copy(), list(self.true_labels), self.config_hash)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            _write_header_comments(fh, ensemble=self.name, config_hash=self.config_hash)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "true_label", "predicted_label",
                        *[f"raw_sum_{c}" for c in self.class_names],
                        *[f"normalized_{c}" for c in self.class_names]])
            for r, sid in enumerate(self.sample_ids):
                w.writerow([sid, self.true_labels[r], self.class_names[self.predicted[r]],
                            *[f"{v:.9f}" for v in self.raw_sums[r]],
                            *[f"{v:.9f}" for v in self.normalized[r]]])
        return path


def align_matrices(matrices: Sequence[PredictionMatrix]) -> list[PredictionMatrix]:
    """Reorder rows and columns of every matrix to match the first one."""
    if not matrices:
        raise ValueError("need at least one prediction matrix")
    ref = matrices[0]
    ref_labels = dict(zip(ref.sample_ids, ref.true_labels))
    out = [ref]
    for m in matrices[1:]:
        if ref.config_hash and m.config_hash and ref.config_hash != m.config_hash:
            raise ConfigHashMismatch(
                f"{m.model_id} was produced under config {m.config_hash}, {ref.model_id} under {ref.config_hash}")
        if set(m.sample_ids) != set(ref.sample_ids) or len(m) != len(ref):
            raise SampleSetMismatch(f"{m.model_id} and {ref.model_id} cover different samples")
        if sorted(m.class_names) != sorted(ref.class_names) or len(m.class_names) != len(ref.class_names):
            raise ClassSetMismatch(f"{m.model_id} classes {m.class_names} != {ref.class_names}")
        for sid, label in zip(m.sample_ids, m.true_labels):
            if ref_labels[sid] != label:
                raise LabelDisagreement(
                    f"sample {sid!r}: {ref.model_id} says {ref_labels[sid]!r}, {m.model_id} says {label!r}")
        row = {sid: i for i, sid in enumerate(m.sample_ids)}
        col = {c: i for i, c in enumerate(m.class_names)}
        rows = [row[s] for s in ref.sample_ids]
        cols = [col[c] for c in ref.class_names]
        out.append(PredictionMatrix(m.model_id, list(ref.sample_ids), list(ref.class_names),
                                    m.probs[np.ix_(rows, cols)], list(ref.true_labels), m.config_hash))
    return out


def sum_of_probabilities(matrices: Sequence[PredictionMatrix], weights=None) -> np.ndarray:
    """Per-sample, per-class sum of member scores (optionally weighted)."""
    if not matrices:
        raise ValueError("need at least one prediction matrix")
    shape = matrices[0].probs.shape
    for m in matrices:
        if m.probs.shape != shape:
            raise ShapeMismatch(f"{m.model_id}: shape {m.probs.shape} != {shape}")
    stack = np.stack([m.probs for m in matrices])
    w = np.ones(len(matrices)) if weights is None else np.asarray(weights, dtype=np.float64)
    return np.tensordot(w, stack, axes=1)


def normalize_and_predict(raw_sums) -> tuple[np.ndarray, np.ndarray]:
    """Divide each row by its total and pick the largest entry (lowest index on ties)."""
    raw = np.atleast_2d(np.asarray(raw_sums, dtype=np.float64))
    totals = raw.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        bad = int(np.flatnonzero(totals[:, 0] <= 0)[0])
        raise ZeroRow(f"row {bad} has no probability mass")
    normalized = raw / totals
    return normalized, np.argmax(normalized, axis=1)


def ensemble_predict(matrices: Sequence[PredictionMatrix], spec: EnsembleSpec) -> EnsembleResult:
    by_id = {m.model_id: m for m in matrices}
    missing = [mid for mid in spec.members if mid not in by_id]
    if missing:
        raise MemberMissing(f"ensemble {spec.name!r} has no predictions for {missing}")
    aligned = align_matrices([by_id[mid] for mid in spec.members])
    raw = sum_of_probabilities(aligned, spec.member_weights)
    normalized, predicted = normalize_and_predict(raw)
    ref = aligned[0]
    return EnsembleResult(
        sample_ids=list(ref.sample_ids),
        class_names=list(ref.class_names),
        raw_sums=raw,
        normalized=normalized,
        predicted=predicted,
        true_labels=list(ref.true_labels),
        name=spec.name,
        config_hash=ref.config_hash,
    )
