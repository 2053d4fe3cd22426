"""
Classification reports from published confusion counts
========================================================

Rebuild per-class precision, recall, F1 and accuracy from nothing but
the 2x2 confusion counts reported for three models.  Rows are the
predicted class and columns the actual class.
"""

from cnnbench.metrics import ConfusionMatrix, per_class_metrics

classes = ["benign", "malignant"]

reported = {
    "DIR ensemble": [[892, 6], [47, 975]],
    "DenseNet121": [[820, 21], [112, 967]],
    "SE-ResNet152": [[802, 39], [144, 935]],
}

for name, counts in reported.items():
    cm = ConfusionMatrix(classes, counts)
    print(per_class_metrics(cm).render(name))

# The ensemble's benign recall is 892 / 939 = 0.94995, which rounds to 95%.
# Its accuracy is 1867 / 1920 = 97.24%, well short of a 99.94% headline.
ens = per_class_metrics(ConfusionMatrix(classes, reported["DIR ensemble"]))
print(f"benign recall {ens.per_class['benign'].recall:.5f}, accuracy {ens.accuracy:.6f}")
