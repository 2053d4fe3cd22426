"""Adam / categorical cross-entropy training with patience-based early stopping."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import ImageSample, _resize, decode_rgb, load_batch, normalize_pixels
from .ensemble import PredictionMatrix
from .errors import ClassCountMismatch, DivergedLoss, EmptySplit, InvalidSpec
from .models import ModelHandle, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

MONITORS = ("val_loss", "val_accuracy")


@dataclass(frozen=True)
class TrainingConfig:
    max_epochs: int = 175
    patience: int = 10
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    loss: str = "categorical_cross_entropy"
    batch_size: int = 32
    seed: int = 0
    monitor: str = "val_loss"
    cache_images: bool = True

    def problems(self) -> list[str]:
        out = []
        if self.max_epochs < 1:
            out.append("training.max_epochs must be >= 1")
        if self.patience < 1:
            out.append("training.patience must be >= 1")
        if not self.learning_rate > 0:
            out.append("training.learning_rate must be > 0")
        if self.batch_size < 1:
            out.append("training.batch_size must be >= 1")
        if self.optimizer != "adam":
            out.append(f"training.optimizer must be 'adam', got {self.optimizer!r}")
        if self.loss != "categorical_cross_entropy":
            out.append(f"training.loss must be 'categorical_cross_entropy', got {self.loss!r}")
        if self.monitor not in MONITORS:
            out.append(f"training.monitor must be one of {MONITORS}, got {self.monitor!r}")
        return out

    def validate(self):
        probs = self.problems()
        if probs:
            raise InvalidSpec("; ".join(probs))

    @classmethod
    def field_names(cls):
        return {f.name for f in fields(cls)}


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


HISTORY_COLUMNS = ("epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy")


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    monitor: str = "val_loss"

    def __len__(self):
        return len(self.records)

    def monitored(self) -> list[float]:
        return [getattr(r, self.monitor) for r in self.records]

    @property
    def best_record(self) -> EpochRecord:
        return self.records[self.best_epoch - 1]

    @property
    def final_record(self) -> EpochRecord:
        return self.records[-1]

    def to_csv(self, path, config_hash=None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            meta = {"monitor": self.monitor, "best_epoch": self.best_epoch,
                    "stopped_early": str(self.stopped_early).lower(), "config_hash": config_hash}
            for k, v in meta.items():
                if v is not None:
                    fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch, *(f"{getattr(r, c):.6f}" for c in HISTORY_COLUMNS[1:])])
        return path

    @classmethod
    def from_csv(cls, path) -> "TrainingHistory":
        meta, lines = {}, []
        with open(path, encoding="utf-8", newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].partition(":")
                    meta[k.strip()] = v.strip()
                else:
                    lines.append(line)
        rows = list(csv.DictReader(lines))
        recs = [EpochRecord(int(r["epoch"]), *(float(r[c]) for c in HISTORY_COLUMNS[1:])) for r in rows]
        return cls(recs, int(meta.get("best_epoch", 0)), meta.get("stopped_early") == "true",
                   meta.get("monitor", "val_loss"))


def _improves(value: float, best: float, monitor: str) -> bool:
    return value < best if monitor == "val_loss" else value > best


def best_index(values: Sequence[float], monitor: str = "val_loss") -> int:
    """Index of the first record achieving the best monitored value."""
    best_i = 0
    for i, v in enumerate(values):
        if _improves(v, values[best_i], monitor):
            best_i = i
    return best_i


def early_stop_check(history, patience: int, monitor: str = "val_loss") -> bool:
    """True once ``patience`` consecutive records have failed to beat the best one.

    Improvement is strict: lower for a loss, higher for an accuracy.
    ``history`` may be a :class:`TrainingHistory` or a plain sequence of
    monitored values.
    """
    values = history.monitored() if isinstance(history, TrainingHistory) else list(history)
    if not values:
        raise ValueError("history is empty")
    return len(values) - 1 - best_index(values, monitor) >= patience


def categorical_cross_entropy(probs, onehot, eps: float = 1e-12) -> float:
    """Mean of -sum_c y_c log p_c over rows."""
    probs = np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0)
    return float(-(np.asarray(onehot) * np.log(probs)).sum(axis=1).mean())


class ImageSet:
    """Samples of one split, decoded on demand at a fixed size."""

    def __init__(self, samples: Sequence[ImageSample], class_names: Sequence[str],
                 input_size=(224, 224), normalization: str = "unit", cache: bool = True):
        self.samples = list(samples)
        self.class_names = list(class_names)
        self.input_size = tuple(input_size)
        self.normalization = normalization
        self.cache = cache
        lookup = {c: i for i, c in enumerate(self.class_names)}
        self.labels = np.array([lookup[s.label.name] for s in self.samples], dtype=np.int64)
        self._raw = None

    def __len__(self):
        return len(self.samples)

    def with_view(self, input_size, normalization) -> "ImageSet":
        return ImageSet(self.samples, self.class_names, input_size, normalization, self.cache)

    def _uint8(self) -> np.ndarray:
        if self._raw is None:
            h, w = self.input_size
            raw = np.empty((len(self), h, w, 3), dtype=np.uint8)
            for i, s in enumerate(self.samples):
                raw[i] = _resize(decode_rgb(s.path), (h, w))
            self._raw = raw
        return self._raw

    def batch(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self.cache:
            return normalize_pixels(self._uint8()[idx], self.normalization)
        return load_batch([self.samples[i] for i in idx], self.input_size, self.normalization)


def evaluate(handle: ModelHandle, dataset: ImageSet, batch_size: int = 32) -> tuple[float, float]:
    """Mean cross-entropy and accuracy in inference mode."""
    handle.net.eval()
    total_loss, correct = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            logits = handle.net(handle.to_tensor(dataset.batch(idx))).double()
            y = torch.from_numpy(dataset.labels[idx])
            total_loss += float(F.cross_entropy(logits, y, reduction="sum"))
            correct += int((logits.argmax(1) == y).sum())
    n = len(dataset)
    return total_loss / n, correct / n


def train(handle: ModelHandle, train_set: ImageSet, val_set: ImageSet, config: TrainingConfig,
          checkpoint_dir, history_path=None, checkpoint_extra=None,
          evaluate_fn: Callable | None = None,
          on_epoch_end: Callable | None = None) -> tuple[TrainingHistory, Path]:
    """Train until ``max_epochs`` or until the monitored metric stalls for ``patience`` epochs.

    The best epoch's weights are checkpointed as they appear and restored
    into ``handle`` at the end. ``evaluate_fn(handle, val_set)`` may be
    supplied to override validation scoring.
    """
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptySplit("train and validation splits must be nonempty")
    overlap = {s.id for s in train_set.samples} & {s.id for s in val_set.samples}
    if overlap:
        raise ValueError(f"train and validation splits share {len(overlap)} samples")
    if handle.num_classes != len(train_set.class_names):
        raise ClassCountMismatch(
            f"model has {handle.num_classes} outputs, dataset has {len(train_set.class_names)} classes")

    train_set = train_set.with_view(handle.input_size, handle.normalization)
    val_set = val_set.with_view(handle.input_size, handle.normalization)
    evaluate_fn = evaluate_fn or (lambda h, d: evaluate(h, d, config.batch_size))

    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(handle.trainable_parameters(), lr=config.learning_rate)
    history = TrainingHistory(monitor=config.monitor)
    best_value, best_state, ckpt = None, None, None

    for epoch in range(1, config.max_epochs + 1):
        handle.set_train_mode()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            x = handle.to_tensor(train_set.batch(idx))
            y = torch.from_numpy(train_set.labels[idx])
            optimizer.zero_grad(set_to_none=True)
            logits = handle.net(x)
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                if history_path is not None:
                    history.to_csv(history_path)
                raise DivergedLoss(epoch, history)
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(idx)
            correct += int((logits.detach().argmax(1) == y).sum())

        val_loss, val_acc = evaluate_fn(handle, val_set)
        if not math.isfinite(val_loss):
            if history_path is not None:
                history.to_csv(history_path)
            raise DivergedLoss(epoch, history)
        rec = EpochRecord(epoch, loss_sum / len(train_set), correct / len(train_set), val_loss, val_acc)
        history.records.append(rec)
        value = getattr(rec, config.monitor)
        if best_value is None or _improves(value, best_value, config.monitor):
            best_value = value
            history.best_epoch = epoch
            best_state = copy.deepcopy(handle.net.state_dict())
            ckpt = save_checkpoint(handle, checkpoint_dir, epoch, val_loss, checkpoint_extra)
        log.info("%s/%s epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
                 handle.arch, handle.mode, epoch, rec.train_loss, rec.train_accuracy, val_loss, val_acc)
        if on_epoch_end is not None:
            on_epoch_end(epoch, handle)
        if early_stop_check(history, config.patience, config.monitor):
            history.stopped_early = epoch < config.max_epochs
            break

    handle.net.load_state_dict(best_state)
    if history_path is not None:
        history.to_csv(history_path)
    return history, ckpt


def predict(checkpoint, eval_set: ImageSet, batch_size: int = 32, model_id: str | None = None,
            config_hash: str | None = None) -> PredictionMatrix:
    """Class probabilities for every sample in ``eval_set``, in order.

    ``batch_size`` only controls decoding; the forward pass runs one sample
    at a time so the output does not depend on it.
    """
    handle = load_checkpoint(checkpoint)
    if len(eval_set) == 0:
        raise EmptySplit("evaluation set is empty")
    if handle.num_classes != len(eval_set.class_names):
        raise ClassCountMismatch(
            f"checkpoint has {handle.num_classes} outputs, dataset has {len(eval_set.class_names)} classes")
    view = eval_set.with_view(handle.input_size, handle.normalization)
    rows = []
    for start in range(0, len(view), batch_size):
        idx = np.arange(start, min(start + batch_size, len(view)))
        batch = view.batch(idx)
        rows.extend(handle.predict_proba(batch[i:i + 1]) for i in range(len(batch)))
    probs = np.concatenate(rows)
    return PredictionMatrix(
        model_id=model_id or f"{handle.arch}:{handle.mode}",
        sample_ids=[s.id for s in view.samples],
        class_names=list(view.class_names),
        probs=probs,
        true_labels=[s.label.name for s in view.samples],
        config_hash=config_hash,
    )
