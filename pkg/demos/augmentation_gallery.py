"""
Augmentation gallery
====================

Draw one synthetic tissue-like image and ten augmented variants, then
save them side by side.  Every variant is a pure function of
(seed, sample id, variant index).
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from cnnbench.augment import AugmentationSpec, augment_image, build_augmenter, sample_plan
from cnnbench.synthetic import synthetic_image

out = Path(sys.argv[1] if len(sys.argv) > 1 else "augmentation_gallery.png")

image = synthetic_image(label=1, size=128, rng=np.random.default_rng(0))
aug = build_augmenter(AugmentationSpec(variants_per_image=10, seed=0))

fig, axes = plt.subplots(1, 11, figsize=(16, 2.2))
axes[0].imshow(image)
axes[0].set_title("original", fontsize=8)
for v, ax in enumerate(axes[1:]):
    ax.imshow(augment_image(aug, image, "malignant__0000", v))
    names = [name for name, _ in sample_plan(aug, "malignant__0000", v)]
    ax.set_title("\n".join(names), fontsize=7)
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig(out, dpi=90)
print(f"wrote {out}")

# the identity spec has no enabled transforms, so variants equal the parent
ident = build_augmenter(AugmentationSpec.identity())
print("identity variant equals parent:", np.array_equal(augment_image(ident, image, "x", 3), image))
