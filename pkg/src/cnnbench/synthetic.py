"""Tiny synthetic two-class image folders for smoke tests and demos."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def synthetic_image(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Stain-like noise with class-dependent texture: sparse pale blobs vs dense dark nuclei."""
    h = w = size
    base = np.array([236, 200, 220], float) if label == 0 else np.array([150, 90, 160], float)
    img = base + rng.normal(0, 12, size=(h, w, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    n_blobs = 3 if label == 0 else 12
    radius = size / (6 if label == 0 else 14)
    color = np.array([190, 120, 180]) if label == 0 else np.array([70, 30, 110])
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2
        img[mask] = color + rng.normal(0, 8, size=3)
    return np.clip(img, 0, 255).astype(np.uint8)


def make_synthetic_dataset(root, n_per_class: int = 100, size: int = 64, seed: int = 0,
                           class_names=("benign", "malignant")) -> Path:
    """Write ``n_per_class`` PNGs per class under ``root/<class>/``."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for label, name in enumerate(class_names):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            Image.fromarray(synthetic_image(label, size, rng)).save(d / f"{name}_{i:04d}.png")
    return root
