"""End-to-end orchestration of a benchmark study.

Layout of ``output_dir``::

    manifest.json  reject_log.csv  augmented/<class>/...
    checkpoints/<arch>_<mode>/best.pt, best.json
    runs/<arch>_<mode>/history.csv, predictions.csv, confusion.csv, report.json, report.txt
    ensembles/<name>/result.csv, predictions.csv, confusion.csv, report.json, report.txt
    comparison.csv  bundle.json
    report/...      (emit_report)
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import multiprocessing
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import torch

from .augment import build_augmenter, expand_training_set
from .config import ExperimentConfig, RunSpec, parse_member
from .data import DatasetManifest, filter_valid, scan_dataset, split_manifest
from .ensemble import PredictionMatrix, ensemble_predict
from .errors import BenchError, RunFailed
from .metrics import (
    ConfusionMatrix,
    accuracy,
    confusion_from_predictions,
    curves,
    per_class_metrics,
    percent,
)
from .models import TransferPolicy, build_model, provider_from_name, read_sidecar
from .training import ImageSet, TrainingHistory, predict, train

log = logging.getLogger(__name__)


def _derived_seed(base: int, key: str) -> int:
    digest = hashlib.sha256(f"{base}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def _out(config: ExperimentConfig) -> Path:
    return Path(config.output_dir)


def checkpoint_dir(config, run: RunSpec) -> Path:
    return _out(config) / "checkpoints" / run.run_id


def run_dir(config, run: RunSpec) -> Path:
    return _out(config) / "runs" / run.run_id


def ensemble_dir(config, name: str) -> Path:
    return _out(config) / "ensembles" / name


# ---------------------------------------------------------------------------
# data preparation


def prepare(config: ExperimentConfig) -> DatasetManifest:
    """scan -> validate -> split -> augment; writes ``manifest.json``."""
    out = _out(config)
    manifest = scan_dataset(config.dataset_root, config.class_subdirs)
    reject_log = config.reject_log or out / "reject_log.csv"
    manifest = filter_valid(manifest, config.min_side, reject_log)
    manifest = split_manifest(manifest, config.split)
    splits = ("train", "val", "test") if config.augment_eval else ("train",)
    manifest = expand_training_set(manifest, build_augmenter(config.augmentation),
                                   out / "augmented", splits=splits)
    manifest.config_hash = config.config_hash
    manifest.save(out / "manifest.json")
    return manifest


def load_prepared(config: ExperimentConfig, reuse: bool = True) -> DatasetManifest:
    path = _out(config) / "manifest.json"
    if reuse and path.is_file():
        manifest = DatasetManifest.load(path)
        if manifest.config_hash == config.config_hash and all(Path(s.path).is_file() for s in manifest.samples):
            return manifest
    return prepare(config)


def _sets(config, manifest):
    cache = config.training.cache_images
    names = manifest.class_names
    train_set = ImageSet(manifest.select("train"), names, cache=cache)
    val_set = ImageSet(manifest.select("val"), names, cache=cache)
    eval_set = ImageSet(manifest.select(config.eval_split), names, cache=cache)
    return train_set, val_set, eval_set


# ---------------------------------------------------------------------------
# per-run work


def train_run(config: ExperimentConfig, run: RunSpec, manifest: DatasetManifest) -> dict:
    torch.use_deterministic_algorithms(True, warn_only=True)
    seed = _derived_seed(config.training.seed, run.model_id)
    provider = provider_from_name(config.transfer.weights) if run.mode == "transfer" else None
    handle = build_model(run.arch, run.mode, len(manifest.classes),
                         policy=TransferPolicy(config.transfer.freeze),
                         input_size=config.run_input_size(run), seed=seed, provider=provider)
    train_set, val_set, _ = _sets(config, manifest)
    rdir = run_dir(config, run)
    history, ckpt = train(
        handle, train_set, val_set, replace(config.training, seed=seed),
        checkpoint_dir(config, run), history_path=rdir / "history.csv",
        checkpoint_extra={"config_hash": config.config_hash, "model_id": run.model_id},
    )
    history.to_csv(rdir / "history.csv", config.config_hash)
    return {"checkpoint": str(ckpt), "history": str(rdir / "history.csv")}


def write_metrics(pm: PredictionMatrix, directory: Path, config_hash: str, title: str) -> dict:
    cm = confusion_from_predictions(pm)
    # zero denominators are recorded in report.json; log instead of warning per run
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = per_class_metrics(cm)
    for msg in report.warnings:
        log.warning("%s: zero denominator, rate set to 0: %s", pm.model_id, msg)
    paths = {
        "confusion": cm.to_csv(directory / "confusion.csv", config_hash),
        "report_json": report.to_json(directory / "report.json", config_hash, model_id=pm.model_id,
                                      confusion=cm.counts.tolist()),
        "report_txt": directory / "report.txt",
    }
    paths["report_txt"].write_text(report.render(title), encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}


def predict_run(config: ExperimentConfig, run: RunSpec, manifest: DatasetManifest) -> dict:
    torch.use_deterministic_algorithms(True, warn_only=True)
    _, _, eval_set = _sets(config, manifest)
    ckpt = checkpoint_dir(config, run) / "best.pt"
    pm = predict(ckpt, eval_set, config.training.batch_size, model_id=run.model_id,
                 config_hash=config.config_hash)
    rdir = run_dir(config, run)
    paths = {"predictions": str(pm.to_csv(rdir / "predictions.csv"))}
    paths.update(write_metrics(pm, rdir, config.config_hash, f"{run.arch} ({run.mode})"))
    return paths


def execute_run(config: ExperimentConfig, run: RunSpec, manifest: DatasetManifest) -> dict:
    paths = train_run(config, run, manifest)
    paths.update(predict_run(config, run, manifest))
    return paths


def run_is_complete(config: ExperimentConfig, run: RunSpec) -> bool:
    """Checkpoint, history and predictions exist and were made under this config."""
    ckpt = checkpoint_dir(config, run) / "best.pt"
    rdir = run_dir(config, run)
    needed = [ckpt, rdir / "history.csv", rdir / "predictions.csv", rdir / "confusion.csv", rdir / "report.json"]
    if not all(p.is_file() for p in needed):
        return False
    try:
        if read_sidecar(ckpt).get("config_hash") != config.config_hash:
            return False
        pm = PredictionMatrix.from_csv(rdir / "predictions.csv")
    except (BenchError, ValueError, OSError):
        return False
    return pm.config_hash == config.config_hash


def _existing_paths(config, run) -> dict:
    rdir = run_dir(config, run)
    return {
        "checkpoint": str(checkpoint_dir(config, run) / "best.pt"),
        "history": str(rdir / "history.csv"),
        "predictions": str(rdir / "predictions.csv"),
        "confusion": str(rdir / "confusion.csv"),
        "report_json": str(rdir / "report.json"),
        "report_txt": str(rdir / "report.txt"),
    }


def run_ensemble(config: ExperimentConfig, spec) -> dict:
    mats = [PredictionMatrix.from_csv(run_dir(config, config.run(m)) / "predictions.csv", model_id=m)
            for m in spec.members]
    result = ensemble_predict(mats, spec)
    edir = ensemble_dir(config, spec.name)
    pm = result.to_prediction_matrix()
    paths = {
        "result": str(result.to_csv(edir / "result.csv")),
        "predictions": str(pm.to_csv(edir / "predictions.csv")),
    }
    paths.update(write_metrics(pm, edir, config.config_hash, f"Ensemble {spec.name} ({', '.join(spec.members)})"))
    return paths


# ---------------------------------------------------------------------------
# bundle


@dataclass
class ReportBundle:
    output_dir: str
    config_hash: str
    runs: dict[str, dict] = field(default_factory=dict)
    ensembles: dict[str, dict] = field(default_factory=dict)
    comparison: list[dict] = field(default_factory=list)
    partial: bool = False
    errors: list[str] = field(default_factory=list)

    @property
    def path(self) -> Path:
        return Path(self.output_dir) / "bundle.json"

    def save(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")
        return self.path

    @classmethod
    def load(cls, path) -> "ReportBundle":
        path = Path(path)
        if path.is_dir():
            path = path / "bundle.json"
        return cls(**json.loads(path.read_text(encoding="utf-8")))


COMPARISON_COLUMNS = ("model", "arch", "mode", "train_accuracy_final", "train_accuracy_best",
                      "best_epoch", "epochs_run", "val_accuracy_best", "test_accuracy", "n_eval")


def comparison_rows(config: ExperimentConfig, bundle: ReportBundle) -> list[dict]:
    """One row per declared run and ensemble; accuracy recomputed from persisted predictions."""
    rows = []
    for run in config.runs:
        paths = bundle.runs.get(run.model_id)
        if not paths:
            continue
        hist = TrainingHistory.from_csv(paths["history"])
        pm = PredictionMatrix.from_csv(paths["predictions"])
        rows.append({
            "model": run.model_id, "arch": run.arch, "mode": run.mode,
            "train_accuracy_final": hist.final_record.train_accuracy,
            "train_accuracy_best": hist.best_record.train_accuracy,
            "best_epoch": hist.best_epoch, "epochs_run": len(hist),
            "val_accuracy_best": hist.best_record.val_accuracy,
            "test_accuracy": round(accuracy(confusion_from_predictions(pm)), 6),
            "n_eval": len(pm),
        })
    for spec in config.ensembles:
        paths = bundle.ensembles.get(spec.name)
        if not paths:
            continue
        pm = PredictionMatrix.from_csv(paths["predictions"])
        rows.append({
            "model": f"{spec.name}:ensemble", "arch": spec.name, "mode": "ensemble",
            "train_accuracy_final": None, "train_accuracy_best": None, "best_epoch": None,
            "epochs_run": None, "val_accuracy_best": None,
            "test_accuracy": round(accuracy(confusion_from_predictions(pm)), 6),
            "n_eval": len(pm),
        })
    return rows


def _write_comparison_csv(bundle: ReportBundle) -> Path:
    path = Path(bundle.output_dir) / "comparison.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash: {bundle.config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for row in bundle.comparison:
            w.writerow(["" if row[c] is None else (f"{row[c]:.6f}" if isinstance(row[c], float) else row[c])
                        for c in COMPARISON_COLUMNS])
    return path


def _finish(config, bundle) -> ReportBundle:
    bundle.comparison = comparison_rows(config, bundle)
    _write_comparison_csv(bundle)
    bundle.save()
    return bundle


def run_experiment(config: ExperimentConfig, resume: bool = False, only=None) -> ReportBundle:
    """Run the whole study; with ``resume`` completed runs are not retrained.

    ``only`` restricts training to the named ``ARCH:MODE`` runs (ensembles
    still use whatever member predictions exist).
    """
    out = _out(config)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    manifest = load_prepared(config, reuse=resume)
    bundle = ReportBundle(str(out), config.config_hash)

    wanted = {parse_member(m) for m in only} if only else None
    todo = []
    for run in config.runs:
        if resume and run_is_complete(config, run):
            log.info("resume: %s already complete", run.model_id)
            bundle.runs[run.model_id] = _existing_paths(config, run)
        elif wanted is None or run.model_id in wanted:
            todo.append(run)

    def fail(run, exc):
        bundle.partial = True
        bundle.errors.append(f"[{run.model_id}] {type(exc).__name__}: {exc}")
        _finish(config, bundle)
        raise RunFailed(run.model_id, exc, bundle) from exc

    if config.parallelism > 1 and len(todo) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(config.parallelism, mp_context=ctx) as pool:
            futures = [(run, pool.submit(execute_run, config, run, manifest)) for run in todo]
            for run, fut in futures:
                try:
                    bundle.runs[run.model_id] = fut.result()
                except Exception as exc:
                    fail(run, exc)
    else:
        for run in todo:
            try:
                bundle.runs[run.model_id] = execute_run(config, run, manifest)
            except Exception as exc:
                fail(run, exc)

    for spec in config.ensembles:
        if all(m in bundle.runs for m in spec.members):
            try:
                bundle.ensembles[spec.name] = run_ensemble(config, spec)
            except Exception as exc:
                bundle.partial = True
                bundle.errors.append(f"[{spec.name}] {type(exc).__name__}: {exc}")
        else:
            bundle.partial = True
            bundle.errors.append(f"[{spec.name}] skipped: member predictions missing")
    bundle.partial = bundle.partial or len(bundle.runs) < len(config.runs)
    return _finish(config, bundle)


# ---------------------------------------------------------------------------
# reports


def _pct(x):
    return "-" if x is None else f"{percent(x)}%"


def comparison_text(rows: list[dict]) -> str:
    header = ("Architecture", "Mode", "Training Accuracy", "Training Accuracy (best epoch)", "Model Accuracy")
    body = [(r["arch"], r["mode"], _pct(r["train_accuracy_final"]), _pct(r["train_accuracy_best"]),
             _pct(r["test_accuracy"])) for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)).rstrip() for b in body]
    return "\n".join(lines) + "\n"


def _plot_curve(series, metric, png, sidecar):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    train_s = next(s for s in series if s.metric == metric and s.split == "train")
    val_s = next(s for s in series if s.metric == metric and s.split == "val")
    with open(sidecar, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", f"train_{metric}", f"val_{metric}"])
        for e, a, b in zip(train_s.epochs, train_s.values, val_s.values):
            w.writerow([e, f"{a:.6f}", f"{b:.6f}"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(train_s.epochs, train_s.values, label=f"training {metric}")
    ax.plot(val_s.epochs, val_s.values, label=f"validation {metric}")
    ax.set_xlabel("epoch")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _plot_confusion(cm: ConfusionMatrix, title, png):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(cm.counts, cmap="Blues")
    m = len(cm.class_names)
    ax.set_xticks(range(m), cm.class_names)
    ax.set_yticks(range(m), cm.class_names)
    ax.set_xlabel("actual")
    ax.set_ylabel("predicted")
    ax.set_title(title, fontsize=9)
    for i in range(m):
        for j in range(m):
            ax.text(j, i, str(cm.counts[i, j]), ha="center", va="center")
    fig.tight_layout()
    fig.savefig(png, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _plot_comparison(rows, png):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(rows) + 2), 3.5))
    ax.bar(range(len(rows)), [100 * r["test_accuracy"] for r in rows])
    ax.set_xticks(range(len(rows)), [r["model"] for r in rows], rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("accuracy (%)")
    fig.tight_layout()
    fig.savefig(png, dpi=100, metadata={"Software": None})
    plt.close(fig)


def emit_report(bundle: ReportBundle, formats=("text", "json", "plots")) -> list[Path]:
    """Render the bundle; returns the written files in a deterministic order."""
    formats = set(formats)
    unknown = formats - {"text", "json", "plots"}
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    outdir = Path(bundle.output_dir) / "report"
    files: list[Path] = []
    if not formats:
        return files
    outdir.mkdir(parents=True, exist_ok=True)
    if "text" in formats:
        p = outdir / "comparison.txt"
        header = f"config {bundle.config_hash}" + (" (PARTIAL)" if bundle.partial else "")
        p.write_text(header + "\n\n" + comparison_text(bundle.comparison), encoding="utf-8")
        files.append(p)
    if "json" in formats:
        p = outdir / "comparison.json"
        p.write_text(json.dumps({"config_hash": bundle.config_hash, "partial": bundle.partial,
                                 "rows": bundle.comparison}, indent=2) + "\n", encoding="utf-8")
        files.append(p)
    if "plots" in formats:
        for model_id, paths in sorted(bundle.runs.items()):
            stem = model_id.replace(":", "_")
            series = curves(TrainingHistory.from_csv(paths["history"]))
            for metric in ("accuracy", "loss"):
                png, side = outdir / f"{stem}_{metric}.png", outdir / f"{stem}_{metric}.csv"
                _plot_curve(series, metric, png, side)
                files += [png, side]
            png = outdir / f"{stem}_confusion.png"
            _plot_confusion(ConfusionMatrix.from_csv(paths["confusion"]), model_id, png)
            files.append(png)
        for name, paths in sorted(bundle.ensembles.items()):
            png = outdir / f"{name}_ensemble_confusion.png"
            _plot_confusion(ConfusionMatrix.from_csv(paths["confusion"]), f"{name} ensemble", png)
            files.append(png)
        if bundle.comparison:
            png = outdir / "comparison.png"
            _plot_comparison(bundle.comparison, png)
            files.append(png)
    return files


def collect_bundle(config: ExperimentConfig) -> ReportBundle:
    """Rebuild a bundle from whatever artifacts already exist on disk."""
    bundle = ReportBundle(str(_out(config)), config.config_hash)
    for run in config.runs:
        paths = _existing_paths(config, run)
        if all(Path(paths[k]).is_file() for k in ("history", "predictions", "confusion")):
            bundle.runs[run.model_id] = paths
    for spec in config.ensembles:
        edir = ensemble_dir(config, spec.name)
        if (edir / "predictions.csv").is_file():
            bundle.ensembles[spec.name] = {
                "result": str(edir / "result.csv"), "predictions": str(edir / "predictions.csv"),
                "confusion": str(edir / "confusion.csv"), "report_json": str(edir / "report.json"),
                "report_txt": str(edir / "report.txt"),
            }
    bundle.partial = len(bundle.runs) < len(config.runs) or len(bundle.ensembles) < len(config.ensembles)
    return _finish(config, bundle)
