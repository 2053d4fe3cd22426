"""Dataset discovery, validation, splitting and batch loading.

The on-disk layout is one sub-directory per class::

    <root>/benign/*.png
    <root>/malignant/*.png

Class indices follow lexicographic order of the directory names, so for
the two histology classes ``benign`` is 0 and ``malignant`` is 1.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    AlreadySplit,
    DecodeFailure,
    EmptyClass,
    InvalidSpec,
    MissingRoot,
    NoClassesFound,
)

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
SPLITS = ("train", "val", "test", "unassigned")
ORIGINS = ("original", "augmented")

# channel statistics used by the pretrained weight providers
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
NORMALIZATIONS = ("unit", "imagenet")


@dataclass(frozen=True, order=True)
class ClassLabel:
    index: int
    name: str


@dataclass(frozen=True)
class ImageSample:
    id: str
    path: str
    label: ClassLabel
    split: str = "unassigned"
    origin: str = "original"
    parent_id: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        if (self.origin == "augmented") != (self.parent_id is not None):
            raise ValueError("parent_id must be set iff origin is 'augmented'")


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    seed: int = 42
    stratified: bool = True

    def problems(self) -> list[str]:
        out = []
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(not 0.0 <= f <= 1.0 for f in fracs):
            out.append(f"split fractions must lie in [0, 1], got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            out.append(f"split fractions must sum to 1, got {sum(fracs)!r}")
        return out

    def validate(self) -> None:
        probs = self.problems()
        if probs:
            raise InvalidSpec("; ".join(probs))


@dataclass
class DatasetManifest:
    root: str
    classes: list[ClassLabel]
    samples: list[ImageSample]
    config_hash: str | None = None
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        names = {c.name for c in self.classes}
        seen_ids, seen_paths = set(), set()
        for s in self.samples:
            if s.label.name not in names:
                raise ValueError(f"sample {s.id!r} has unknown class {s.label.name!r}")
            if s.id in seen_ids:
                raise ValueError(f"duplicate sample id {s.id!r}")
            if s.path in seen_paths:
                raise ValueError(f"duplicate sample path {s.path!r}")
            seen_ids.add(s.id)
            seen_paths.add(s.path)

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    @property
    def counts(self) -> dict[str, dict[str, int]]:
        """Per-class, per-split sample tallies."""
        table = {c.name: {s: 0 for s in SPLITS} for c in self.classes}
        for s in self.samples:
            table[s.label.name][s.split] += 1
        return table

    def by_id(self) -> dict[str, ImageSample]:
        return {s.id: s for s in self.samples}

    def select(self, split: str, origin: str | None = None) -> list[ImageSample]:
        return [
            s for s in self.samples
            if s.split == split and (origin is None or s.origin == origin)
        ]

    def to_dict(self) -> dict:
        d = {
            "root": self.root,
            "classes": [{"index": c.index, "name": c.name} for c in self.classes],
            "samples": [
                {
                    "id": s.id,
                    "path": s.path,
                    "label": s.label.name,
                    "split": s.split,
                    "origin": s.origin,
                    "parent_id": s.parent_id,
                }
                for s in self.samples
            ],
        }
        if self.config_hash is not None:
            d["config_hash"] = self.config_hash
        if self.notes:
            d["notes"] = list(self.notes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        classes = [ClassLabel(int(c["index"]), c["name"]) for c in d["classes"]]
        lookup = {c.name: c for c in classes}
        samples = [
            ImageSample(
                id=s["id"],
                path=s["path"],
                label=lookup[s["label"]],
                split=s["split"],
                origin=s["origin"],
                parent_id=s.get("parent_id"),
            )
            for s in d["samples"]
        ]
        return cls(d["root"], classes, samples, d.get("config_hash"), list(d.get("notes", [])))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _is_decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (UnidentifiedImageError, OSError, SyntaxError):
        return False


def _sample_ids(class_name: str, files: list[Path]) -> list[str]:
    stems = Counter(f.stem for f in files)
    ids = []
    for f in files:
        if stems[f.stem] == 1:
            ids.append(f"{class_name}__{f.stem}")
        else:
            ids.append(f"{class_name}__{f.stem}_{f.suffix.lstrip('.').lower()}")
    return ids


def scan_dataset(root, class_subdirs: Sequence[str] | None = None) -> DatasetManifest:
    """Enumerate every decodable image under ``root/<class>/``.

    Samples come back sorted by id with their split unassigned.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingRoot(f"dataset root {str(root)!r} does not exist")

    if class_subdirs is None:
        names = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    else:
        names = sorted(class_subdirs)
        missing = [n for n in names if not (root / n).is_dir()]
        if missing:
            raise NoClassesFound(f"class directories not found under {root}: {missing}")
    if len(names) < 2:
        raise NoClassesFound(f"need at least 2 class directories under {root}, found {names}")

    classes = [ClassLabel(i, n) for i, n in enumerate(names)]
    samples = []
    for label in classes:
        files = sorted(
            p for p in (root / label.name).iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        good = []
        for f in files:
            if _is_decodable(f):
                good.append(f)
            else:
                log.warning("skipping undecodable file %s", f)
        if not good:
            raise EmptyClass(f"class {label.name!r} has no decodable images")
        for sid, f in zip(_sample_ids(label.name, good), good):
            samples.append(ImageSample(sid, str(f), label))
    samples.sort(key=lambda s: s.id)
    return DatasetManifest(str(root), classes, samples)


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    reason: str | None = None
    detail: str = ""

    def __bool__(self):
        return self.ok


def validate_sample(path, min_side: int = 64) -> ValidationResult:
    """Mechanical quality gate: decodes, has three channels, big enough."""
    try:
        with Image.open(path) as im:
            im.load()
            mode, (w, h) = im.mode, im.size
            bands = len(im.getbands())
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        return ValidationResult(False, "decode_error", str(exc))
    # palette images expand to RGB; anything else must carry exactly 3 colour bands
    if mode == "P":
        bands = 3
    if bands != 3:
        return ValidationResult(False, "channel_count", f"mode={mode} bands={bands}")
    if min(w, h) < min_side:
        return ValidationResult(False, "too_small", f"{w}x{h} < {min_side}")
    return ValidationResult(True)


def filter_valid(manifest: DatasetManifest, min_side: int = 64, reject_log=None) -> DatasetManifest:
    """Drop samples failing :func:`validate_sample`; optionally log them as CSV."""
    kept, rejected = [], []
    for s in manifest.samples:
        res = validate_sample(s.path, min_side)
        (kept if res.ok else rejected).append((s, res))
    if reject_log is not None:
        reject_log = Path(reject_log)
        reject_log.parent.mkdir(parents=True, exist_ok=True)
        with open(reject_log, "w", encoding="utf-8", newline="") as fh:
            fh.write("sample_id,path,reason,detail\n")
            for s, res in rejected:
                detail = res.detail.replace(",", ";").replace("\n", " ")
                fh.write(f"{s.id},{s.path},{res.reason},{detail}\n")
    for s, res in rejected:
        log.info("rejected %s: %s", s.id, res.reason)
    out = replace(manifest, samples=[s for s, _ in kept])
    by_class = Counter(s.label.name for s in out.samples)
    for c in out.classes:
        if by_class[c.name] == 0:
            raise EmptyClass(f"class {c.name!r} has no images left after validation")
    return out


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def _allocate(n: int, fracs: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items to ``fracs``."""
    exact = [n * f for f in fracs]
    sizes = [int(np.floor(x + 1e-9)) for x in exact]
    left = n - sum(sizes)
    order = sorted(range(len(fracs)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:left]:
        sizes[i] += 1
    return sizes


def split_manifest(manifest: DatasetManifest, spec: SplitSpec) -> DatasetManifest:
    """Assign every sample to train/val/test.

    The assignment depends only on the sample ids and ``spec.seed``.
    """
    spec.validate()
    if any(s.split != "unassigned" for s in manifest.samples):
        raise AlreadySplit("manifest already has split assignments")

    fracs = (spec.train_frac, spec.val_frac, spec.test_frac)
    if spec.stratified:
        groups = {c.name: sorted(s.id for s in manifest.samples if s.label.name == c.name)
                  for c in manifest.classes}
    else:
        groups = {"*": sorted(s.id for s in manifest.samples)}

    assign = {}
    for key, ids in groups.items():
        rng = np.random.default_rng([spec.seed, _stable_int(key)])
        order = [ids[i] for i in rng.permutation(len(ids))]
        sizes = _allocate(len(ids), fracs)
        start = 0
        for split, size in zip(("train", "val", "test"), sizes):
            for sid in order[start:start + size]:
                assign[sid] = split
            start += size

    samples = [replace(s, split=assign[s.id]) for s in manifest.samples]
    return replace(manifest, samples=samples)


def decode_rgb(path) -> np.ndarray:
    """Decode an image file to an (h, w, 3) uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def _resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    if img.shape[:2] == (h, w):
        return img
    return np.asarray(Image.fromarray(img).resize((w, h), Image.BILINEAR))


def normalize_pixels(batch: np.ndarray, normalize: str = "unit") -> np.ndarray:
    """Map uint8 pixels to float32 using the named normalization."""
    if normalize not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalize!r}; expected one of {NORMALIZATIONS}")
    out = batch.astype(np.float32) / 255.0
    if normalize == "imagenet":
        out = (out - np.asarray(IMAGENET_MEAN, np.float32)) / np.asarray(IMAGENET_STD, np.float32)
    return out


def load_batch(samples: Iterable[ImageSample], target_size: tuple[int, int],
               normalize: str = "unit") -> np.ndarray:
    """Decode, resize and normalize ``samples`` into an (N, h, w, 3) float32 array."""
    h, w = target_size
    if h <= 0 or w <= 0:
        raise ValueError(f"target size must be positive, got {target_size}")
    samples = list(samples)
    raw = np.empty((len(samples), h, w, 3), dtype=np.uint8)
    for i, s in enumerate(samples):
        try:
            raw[i] = _resize(decode_rgb(s.path), (h, w))
        except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
            raise DecodeFailure(s.id, str(exc)) from exc
    return normalize_pixels(raw, normalize)

