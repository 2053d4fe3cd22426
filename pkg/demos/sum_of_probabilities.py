"""
Sum-of-probabilities ensembling, step by step
==============================================

Three models score one sample over three classes.  Their scores are
added per class, the sums are normalized so they add up to one, and the
largest normalized sum decides the class.
"""

import numpy as np

from cnnbench.ensemble import EnsembleSpec, PredictionMatrix, ensemble_predict, normalize_and_predict

classes = ["class-1", "class-2", "class-3"]

# per-model softmax outputs for a single sample
scores = {
    "model-a": [0.6, 0.3, 0.1],
    "model-b": [0.4, 0.4, 0.2],
    "model-c": [0.3, 0.4, 0.3],
}

members = [PredictionMatrix(name, ["sample-0"], classes, np.array([p]), ["class-1"])
           for name, p in scores.items()]
result = ensemble_predict(members, EnsembleSpec("demo", tuple(scores)))

print("raw sums      ", np.round(result.raw_sums[0], 4))      # 1.3, 1.1, 0.6
print("normalized    ", np.round(result.normalized[0], 4))    # 0.4333, 0.3667, 0.2
print("prediction    ", classes[result.predicted[0]])

# Normalizing divides a row by a positive constant, so the decision is
# always the argmax of the raw sums as well.
rng = np.random.default_rng(0)
raw = rng.dirichlet(np.ones(3), size=(3, 1000)).sum(axis=0)
_, pred = normalize_and_predict(raw)
print("argmax agrees on 1000 random rows:", bool(np.all(pred == raw.argmax(axis=1))))
