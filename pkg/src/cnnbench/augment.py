"""Offline augmentation of the training split.

Each original image gets ``k`` variants. A variant applies 1-3 transforms
drawn uniformly from the enabled inventory, and every random choice is
keyed on ``(seed, sample_id, variant)`` so output does not depend on call
order or worker scheduling.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .data import DatasetManifest, ImageSample, decode_rgb
from .errors import AlreadyExpanded, DataError, InvalidSpec, IoFailure, VariantOutOfRange

log = logging.getLogger(__name__)

# application order; geometric before photometric
INVENTORY = (
    "crop",
    "rotate",
    "right_angle",
    "shear",
    "skew",
    "distortion",
    "hflip",
    "vflip",
    "brightness",
    "contrast",
    "saturation",
    "intensity",
)

_RANGE_FIELDS = (
    "rotation_deg", "shear", "skew", "crop_scale",
    "brightness", "contrast", "saturation", "intensity_shift",
)


@dataclass(frozen=True)
class AugmentationSpec:
    rotation_deg: tuple[float, float] = (-15.0, 15.0)
    right_angle_rotations: tuple[int, ...] = (90, 180, 270)
    shear: tuple[float, float] = (-0.2, 0.2)
    skew: tuple[float, float] = (0.0, 0.2)
    crop_scale: tuple[float, float] = (0.8, 1.0)
    flips: tuple[str, ...] = ("horizontal", "vertical")
    brightness: tuple[float, float] = (0.8, 1.2)
    contrast: tuple[float, float] = (0.8, 1.2)
    saturation: tuple[float, float] = (0.8, 1.2)
    intensity_shift: tuple[float, float] = (-0.08, 0.08)
    distortion: float = 0.05
    variants_per_image: int = 10
    max_transforms: int = 3
    seed: int = 0

    @classmethod
    def identity(cls, variants_per_image: int = 10, seed: int = 0) -> "AugmentationSpec":
        """A spec whose every transform is the identity."""
        return cls(
            rotation_deg=(0.0, 0.0), right_angle_rotations=(), shear=(0.0, 0.0),
            skew=(0.0, 0.0), crop_scale=(1.0, 1.0), flips=(), brightness=(1.0, 1.0),
            contrast=(1.0, 1.0), saturation=(1.0, 1.0), intensity_shift=(0.0, 0.0),
            distortion=0.0, variants_per_image=variants_per_image, seed=seed,
        )

    def problems(self) -> list[str]:
        out = []
        for name in _RANGE_FIELDS:
            rng = getattr(self, name)
            if len(rng) != 2 or rng[0] > rng[1]:
                out.append(f"augmentation.{name} must be an ordered pair (lo <= hi), got {rng}")
        lo, hi = self.crop_scale
        if lo <= 0 or hi > 1:
            out.append(f"augmentation.crop_scale must lie in (0, 1], got {self.crop_scale}")
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name)[0] < 0:
                out.append(f"augmentation.{name} factors must be nonnegative")
        bad = set(self.right_angle_rotations) - {90, 180, 270}
        if bad:
            out.append(f"augmentation.right_angle_rotations must be drawn from 90/180/270, got {sorted(bad)}")
        bad = set(self.flips) - {"horizontal", "vertical"}
        if bad:
            out.append(f"augmentation.flips must be horizontal/vertical, got {sorted(bad)}")
        if not 0 <= self.distortion <= 0.05:
            out.append(f"augmentation.distortion must lie in [0, 0.05], got {self.distortion}")
        if self.variants_per_image < 0:
            out.append("augmentation.variants_per_image must be >= 0")
        if self.max_transforms < 1:
            out.append("augmentation.max_transforms must be >= 1")
        return out

    def enabled(self) -> list[str]:
        on = {
            "crop": self.crop_scale != (1.0, 1.0),
            "rotate": self.rotation_deg != (0.0, 0.0),
            "right_angle": bool(self.right_angle_rotations),
            "shear": self.shear != (0.0, 0.0),
            "skew": self.skew != (0.0, 0.0),
            "distortion": self.distortion > 0,
            "hflip": "horizontal" in self.flips,
            "vflip": "vertical" in self.flips,
            "brightness": self.brightness != (1.0, 1.0),
            "contrast": self.contrast != (1.0, 1.0),
            "saturation": self.saturation != (1.0, 1.0),
            "intensity": self.intensity_shift != (0.0, 0.0),
        }
        return [t for t in INVENTORY if on[t]]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown augmentation keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass
class AugmenterState:
    spec: AugmentationSpec
    transforms: tuple[str, ...] = field(default=())

    def rng(self, sample_id: str, variant: int) -> np.random.Generator:
        key = int.from_bytes(hashlib.sha256(sample_id.encode("utf-8")).digest()[:8], "little")
        return np.random.default_rng([self.spec.seed, key, variant])


def build_augmenter(spec: AugmentationSpec) -> AugmenterState:
    probs = spec.problems()
    if probs:
        raise InvalidSpec("; ".join(probs))
    return AugmenterState(spec, tuple(spec.enabled()))


# ---------------------------------------------------------------------------
# primitive transforms on (h, w, 3) uint8 arrays


def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _warp(img: np.ndarray, src_y: np.ndarray, src_x: np.ndarray) -> np.ndarray:
    """Resample ``img`` at source coordinates (bilinear, reflected border)."""
    f = img.astype(np.float64)
    out = np.empty_like(f)
    for c in range(f.shape[2]):
        out[..., c] = ndimage.map_coordinates(f[..., c], [src_y, src_x], order=1, mode="reflect")
    return _to_uint8(out)


def _grid(h: int, w: int):
    return np.mgrid[0:h, 0:w].astype(np.float64)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


def vflip(img: np.ndarray) -> np.ndarray:
    return img[::-1].copy()


def rotate_right_angle(img: np.ndarray, degrees: int) -> np.ndarray:
    """Counter-clockwise rotation by a multiple of 90 degrees.

    Non-square images are resized back to their original shape.
    """
    out = np.rot90(img, k=(degrees // 90) % 4).copy()
    if out.shape != img.shape:
        h, w = img.shape[:2]
        out = np.asarray(Image.fromarray(out).resize((w, h), Image.BILINEAR))
    return out


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    h, w = img.shape[:2]
    yy, xx = _grid(h, w)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    t = np.deg2rad(degrees)
    dy, dx = yy - cy, xx - cx
    # counter-clockwise on screen: inverse-map each output pixel
    src_x = np.cos(t) * dx - np.sin(t) * dy + cx
    src_y = np.sin(t) * dx + np.cos(t) * dy + cy
    return _warp(img, src_y, src_x)


def shear(img: np.ndarray, factor: float) -> np.ndarray:
    h, w = img.shape[:2]
    yy, xx = _grid(h, w)
    return _warp(img, yy, xx + factor * (yy - (h - 1) / 2))


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 matrix mapping four ``src`` points onto ``dst`` points."""
    a, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b += [u, v]
    p = np.linalg.solve(np.asarray(a, float), np.asarray(b, float))
    return np.append(p, 1.0).reshape(3, 3)


def skew(img: np.ndarray, magnitude: float, side: int) -> np.ndarray:
    """Perspective tilt: one side of the frame is pinched by ``magnitude``."""
    h, w = img.shape[:2]
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], float)
    src = corners.copy()
    dx, dy = magnitude * (w - 1), magnitude * (h - 1)
    if side == 0:    # top edge
        src[0, 0] += dx
        src[1, 0] -= dx
    elif side == 1:  # right edge
        src[1, 1] += dy
        src[2, 1] -= dy
    elif side == 2:  # bottom edge
        src[3, 0] += dx
        src[2, 0] -= dx
    else:            # left edge
        src[0, 1] += dy
        src[3, 1] -= dy
    H = _homography(corners, src)
    yy, xx = _grid(h, w)
    pts = np.stack([xx.ravel(), yy.ravel(), np.ones(h * w)])
    mapped = H @ pts
    src_x = (mapped[0] / mapped[2]).reshape(h, w)
    src_y = (mapped[1] / mapped[2]).reshape(h, w)
    return _warp(img, src_y, src_x)


def crop_resize(img: np.ndarray, scale: float, fy: float, fx: float) -> np.ndarray:
    """Crop a ``scale``-sized window at relative offset (fy, fx) and resize back."""
    h, w = img.shape[:2]
    ch, cw = scale * (h - 1), scale * (w - 1)
    oy, ox = fy * (h - 1 - ch), fx * (w - 1 - cw)
    yy, xx = _grid(h, w)
    return _warp(img, oy + yy * scale, ox + xx * scale)


def elastic(img: np.ndarray, displacements: np.ndarray) -> np.ndarray:
    """Grid warp from a (2, gh, gw) array of control-point displacements in pixels."""
    h, w = img.shape[:2]
    gh, gw = displacements.shape[1:]
    yy, xx = _grid(h, w)
    gy = yy * (gh - 1) / max(h - 1, 1)
    gx = xx * (gw - 1) / max(w - 1, 1)
    dy = ndimage.map_coordinates(displacements[0], [gy, gx], order=1, mode="nearest")
    dx = ndimage.map_coordinates(displacements[1], [gy, gx], order=1, mode="nearest")
    return _warp(img, yy + dy, xx + dx)


def _gray(f: np.ndarray) -> np.ndarray:
    return f @ np.array([0.299, 0.587, 0.114])


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return _to_uint8(img.astype(np.float64) * factor)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    f = img.astype(np.float64)
    m = _gray(f).mean()
    return _to_uint8((f - m) * factor + m)


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    f = img.astype(np.float64)
    g = _gray(f)[..., None]
    return _to_uint8(g + (f - g) * factor)


def shift_intensity(img: np.ndarray, shift: float) -> np.ndarray:
    return _to_uint8(img.astype(np.float64) + 255.0 * shift)


# ---------------------------------------------------------------------------


def _uniform(rng, pair):
    lo, hi = pair
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def sample_plan(aug: AugmenterState, sample_id: str, variant: int) -> list[tuple[str, dict]]:
    """The transform chain (name, parameters) for one variant of one sample."""
    spec = aug.spec
    if not 0 <= variant < spec.variants_per_image:
        raise VariantOutOfRange(
            f"variant {variant} outside [0, {spec.variants_per_image}) for {sample_id!r}")
    enabled = list(aug.transforms)
    if not enabled:
        return []
    rng = aug.rng(sample_id, variant)
    n = int(rng.integers(1, min(spec.max_transforms, len(enabled)) + 1))
    picked = set(rng.choice(enabled, size=n, replace=False).tolist())
    plan = []
    for name in INVENTORY:
        if name not in picked:
            continue
        if name == "crop":
            p = {"scale": _uniform(rng, spec.crop_scale), "fy": float(rng.uniform()), "fx": float(rng.uniform())}
        elif name == "rotate":
            p = {"degrees": _uniform(rng, spec.rotation_deg)}
        elif name == "right_angle":
            p = {"degrees": int(rng.choice(sorted(spec.right_angle_rotations)))}
        elif name == "shear":
            p = {"factor": _uniform(rng, spec.shear)}
        elif name == "skew":
            p = {"magnitude": _uniform(rng, spec.skew), "side": int(rng.integers(4))}
        elif name == "distortion":
            p = {"field": rng.uniform(-1.0, 1.0, size=(2, 4, 4)) * spec.distortion}
        elif name in ("hflip", "vflip"):
            p = {}
        elif name == "intensity":
            p = {"shift": _uniform(rng, spec.intensity_shift)}
        else:
            p = {"factor": _uniform(rng, getattr(spec, name))}
        plan.append((name, p))
    return plan


def apply_transform(img: np.ndarray, name: str, params: dict) -> np.ndarray:
    if name == "crop":
        return crop_resize(img, params["scale"], params["fy"], params["fx"])
    if name == "rotate":
        return rotate(img, params["degrees"])
    if name == "right_angle":
        return rotate_right_angle(img, params["degrees"])
    if name == "shear":
        return shear(img, params["factor"])
    if name == "skew":
        return skew(img, params["magnitude"], params["side"])
    if name == "distortion":
        h, w = img.shape[:2]
        scale = np.array([h, w], float).reshape(2, 1, 1)
        return elastic(img, params["field"] * scale)
    if name == "hflip":
        return hflip(img)
    if name == "vflip":
        return vflip(img)
    if name == "brightness":
        return adjust_brightness(img, params["factor"])
    if name == "contrast":
        return adjust_contrast(img, params["factor"])
    if name == "saturation":
        return adjust_saturation(img, params["factor"])
    if name == "intensity":
        return shift_intensity(img, params["shift"])
    raise KeyError(name)


def augment_image(aug: AugmenterState, image: np.ndarray, sample_id: str, variant: int) -> np.ndarray:
    out = np.asarray(image, dtype=np.uint8).copy()
    for name, params in sample_plan(aug, sample_id, variant):
        out = apply_transform(out, name, params)
    return out


def augmented_path(out_dir, class_name: str, parent_id: str, variant: int) -> Path:
    return Path(out_dir) / class_name / f"{parent_id}__aug{variant}.png"


def expand_training_set(manifest: DatasetManifest, aug: AugmenterState, out_dir,
                        splits=("train",), workers: int = 1) -> DatasetManifest:
    """Write ``k`` augmented PNGs per original in ``splits`` and register them.

    Only the train split is expanded by default; passing val/test as well
    reproduces the setting where evaluation images were augmented too.
    """
    if any(s.split == "unassigned" for s in manifest.samples):
        raise DataError("manifest must be split before augmentation")
    if any(s.origin == "augmented" for s in manifest.samples):
        raise AlreadyExpanded("manifest already contains augmented samples")
    k = aug.spec.variants_per_image
    if k == 0:
        return replace(manifest, notes=[*manifest.notes, "augmentation: k=0, no-op"])

    parents = [s for s in manifest.samples if s.split in splits and s.origin == "original"]

    def work(parent: ImageSample) -> list[ImageSample]:
        img = decode_rgb(parent.path)
        made = []
        for v in range(k):
            path = augmented_path(out_dir, parent.label.name, parent.id, v)
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                Image.fromarray(augment_image(aug, img, parent.id, v)).save(path, format="PNG")
            except OSError as exc:
                raise IoFailure(f"cannot write {path}: {exc}") from exc
            made.append(ImageSample(
                id=f"{parent.id}__aug{v}", path=str(path), label=parent.label,
                split=parent.split, origin="augmented", parent_id=parent.id,
            ))
        return made

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            batches = list(pool.map(work, parents))
    else:
        batches = [work(p) for p in parents]
    new = [s for b in batches for s in b]
    log.info("wrote %d augmented images for %d originals", len(new), len(parents))
    samples = sorted([*manifest.samples, *new], key=lambda s: s.id)
    return replace(manifest, samples=samples)
