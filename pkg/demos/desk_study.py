"""
A desk-scale benchmark study
============================

Generate a 200-image synthetic two-class dataset, then run the study in
``configs/desk.json``.  That means two from-scratch runs, one transfer run
with stand-in weights, and a two-member ensemble.  Runs in a few
minutes on one CPU.  The same study can be started from the shell with

    cnnbench run --config configs/desk.json
"""

from pathlib import Path

from cnnbench.bench import comparison_text, emit_report, run_experiment
from cnnbench.config import load_config
from cnnbench.synthetic import make_synthetic_dataset

repo = Path(__file__).resolve().parents[1]
config = load_config(repo / "configs" / "desk.json")

# the synthetic classes differ in blob density and stain colour
if not Path(config.dataset_root).is_dir():
    make_synthetic_dataset(config.dataset_root, n_per_class=100, size=64, seed=0)

bundle = run_experiment(config, resume=True)
print(comparison_text(bundle.comparison))

for path in emit_report(bundle, ["text", "json", "plots"]):
    print("wrote", path)
