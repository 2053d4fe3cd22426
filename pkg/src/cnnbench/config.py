"""Declarative experiment configuration (JSON, ``"spec_version": 1``)."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentationSpec
from .data import SplitSpec
from .ensemble import DIR_MEMBERS, EnsembleSpec
from .errors import ParseError, UnknownArchitecture, ValidationError
from .models import FREEZE_POLICIES, MODES, list_architectures, resolve_arch
from .training import TrainingConfig

SPEC_VERSION = 1

_TOP_KEYS = {
    "spec_version", "dataset_root", "output_dir", "global_seed", "class_subdirs", "min_side",
    "split", "augmentation", "augment_eval", "runs", "input_size", "transfer", "training",
    "ensembles", "eval_split", "reject_log", "parallelism",
}
# keys that change where artifacts go or how fast they are made, not what they contain
_UNHASHED = {"output_dir", "parallelism", "reject_log"}


@dataclass(frozen=True)
class RunSpec:
    arch: str
    mode: str = "scratch"
    input_size: tuple[int, int] | None = None

    @property
    def model_id(self) -> str:
        return f"{self.arch}:{self.mode}"

    @property
    def run_id(self) -> str:
        return f"{self.arch}_{self.mode}"


@dataclass(frozen=True)
class TransferSettings:
    weights: str = "hub"
    freeze: str = "all_backbone"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_root: str
    runs: tuple[RunSpec, ...]
    output_dir: str = "output"
    global_seed: int = 42
    class_subdirs: tuple[str, ...] | None = None
    min_side: int = 64
    split: SplitSpec = field(default_factory=SplitSpec)
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    augment_eval: bool = False
    input_size: tuple[int, int] | None = None
    transfer: TransferSettings = field(default_factory=TransferSettings)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    ensembles: tuple[EnsembleSpec, ...] = ()
    eval_split: str = "test"
    reject_log: str | None = None
    parallelism: int = 1
    spec_version: int = SPEC_VERSION

    def to_dict(self) -> dict:
        d = {
            "spec_version": self.spec_version,
            "dataset_root": self.dataset_root,
            "output_dir": self.output_dir,
            "global_seed": self.global_seed,
            "class_subdirs": list(self.class_subdirs) if self.class_subdirs else None,
            "min_side": self.min_side,
            "split": asdict(self.split),
            "augmentation": self.augmentation.to_dict(),
            "augment_eval": self.augment_eval,
            "runs": [
                {"arch": r.arch, "mode": r.mode,
                 **({"input_size": list(r.input_size)} if r.input_size else {})}
                for r in self.runs
            ],
            "input_size": list(self.input_size) if self.input_size else None,
            "transfer": asdict(self.transfer),
            "training": asdict(self.training),
            "ensembles": [
                {"name": e.name, "members": list(e.members),
                 "weights": list(e.weights) if e.weights is not None else None,
                 "aggregation": e.aggregation}
                for e in self.ensembles
            ],
            "eval_split": self.eval_split,
            "reject_log": self.reject_log,
            "parallelism": self.parallelism,
        }
        return d

    @property
    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def run(self, model_id: str) -> RunSpec:
        for r in self.runs:
            if r.model_id == model_id:
                return r
        raise KeyError(model_id)

    def run_input_size(self, run: RunSpec):
        return run.input_size or self.input_size

    def comparison_plan(self) -> list[str]:
        """Row labels of the comparison table: every run, then every ensemble."""
        return [r.model_id for r in self.runs] + [f"{e.name}:ensemble" for e in self.ensembles]

    def with_overrides(self, seed=None, augment_eval=None, reject_log=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            raw = cfg.to_dict()
            raw["global_seed"] = seed
            for section in ("split", "augmentation", "training"):
                raw[section]["seed"] = seed
            cfg = config_from_dict(raw)
        if augment_eval is not None:
            cfg = replace(cfg, augment_eval=augment_eval)
        if reject_log is not None:
            cfg = replace(cfg, reject_log=str(reject_log))
        return cfg


def parse_member(ref: str) -> str:
    """``"DenseNet121"`` -> ``"DenseNet121:scratch"``; canonicalizes the arch name."""
    arch, _, mode = str(ref).partition(":")
    return f"{resolve_arch(arch)}:{mode or 'scratch'}"


def _check_keys(d, allowed, where, problems):
    if not isinstance(d, dict):
        problems.append(f"{where} must be an object")
        return False
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        problems.append(f"{where}: unknown keys {unknown}")
    return True


def _size(v, where, problems):
    if v is None:
        return None
    if not (isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, int) and x > 0 for x in v)):
        problems.append(f"{where} must be [height, width] positive integers, got {v!r}")
        return None
    return tuple(v)


def config_from_dict(raw: dict, base_dir=None) -> ExperimentConfig:
    """Validate ``raw`` and fill defaults; every violation is reported at once."""
    problems: list[str] = []
    if not _check_keys(raw, _TOP_KEYS, "config", problems):
        raise ValidationError(problems)
    if raw.get("spec_version", SPEC_VERSION) != SPEC_VERSION:
        problems.append(f"spec_version must be {SPEC_VERSION}, got {raw.get('spec_version')!r}")
    if "dataset_root" not in raw:
        problems.append("dataset_root is required")
    base = Path(base_dir) if base_dir is not None else None

    def resolve(p):
        if p is None:
            return None
        path = Path(p)
        if base is not None and not path.is_absolute():
            path = base / path
        return os.path.normpath(path)

    seed = raw.get("global_seed", 42)
    if not isinstance(seed, int):
        problems.append("global_seed must be an integer")
        seed = 42

    def section(name, cls, allowed):
        d = dict(raw.get(name) or {})
        if not _check_keys(d, allowed, name, problems):
            return cls()
        d.setdefault("seed", seed)
        d = {k: v for k, v in d.items() if k in allowed}
        try:
            return cls.from_dict(d) if hasattr(cls, "from_dict") else cls(**d)
        except (TypeError, ValueError) as exc:
            problems.append(f"{name}: {exc}")
            return cls()

    split = section("split", SplitSpec, {f.name for f in fields(SplitSpec)})
    problems += [f"split: {p}" for p in split.problems()]
    augmentation = section("augmentation", AugmentationSpec, {f.name for f in fields(AugmentationSpec)})
    problems += augmentation.problems()
    training = section("training", TrainingConfig, TrainingConfig.field_names())
    problems += training.problems()

    transfer_raw = raw.get("transfer") or {}
    transfer = TransferSettings()
    if _check_keys(transfer_raw, {"weights", "freeze"}, "transfer", problems):
        transfer = TransferSettings(**{k: v for k, v in transfer_raw.items() if k in {"weights", "freeze"}})
        if transfer.freeze not in FREEZE_POLICIES:
            problems.append(f"transfer.freeze must be one of {FREEZE_POLICIES}")
        w = transfer.weights
        if not (w in ("hub", "seeded") or w.startswith(("seeded:", "dir:"))):
            problems.append(f"transfer.weights must be hub | seeded[:N] | dir:<path>, got {w!r}")
        elif w.startswith("dir:"):
            transfer = replace(transfer, weights="dir:" + resolve(w[4:]))

    runs: list[RunSpec] = []
    raw_runs = raw.get("runs")
    if not raw_runs:
        problems.append("runs must list at least one {arch, mode} entry")
        raw_runs = []
    for i, r in enumerate(raw_runs):
        if not _check_keys(r, {"arch", "mode", "input_size"}, f"runs[{i}]", problems):
            continue
        try:
            arch = resolve_arch(r.get("arch"))
        except UnknownArchitecture as exc:
            problems.append(f"runs[{i}]: {exc}")
            continue
        mode = r.get("mode", "scratch")
        if mode not in MODES:
            problems.append(f"runs[{i}]: mode must be one of {MODES}, got {mode!r}")
            continue
        runs.append(RunSpec(arch, mode, _size(r.get("input_size"), f"runs[{i}].input_size", problems)))
    ids = [r.model_id for r in runs]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        problems.append(f"duplicate runs: {dupes}")

    ensembles = []
    names = set()
    for i, e in enumerate(raw.get("ensembles") or []):
        if not _check_keys(e, {"name", "members", "weights", "aggregation"}, f"ensembles[{i}]", problems):
            continue
        try:
            members = tuple(parse_member(m) for m in e.get("members", DIR_MEMBERS))
        except UnknownArchitecture as exc:
            problems.append(f"ensembles[{i}]: {exc}")
            continue
        missing = [m for m in members if m not in ids]
        if missing:
            problems.append(f"ensembles[{i}] references undeclared runs: {missing}")
        try:
            spec = EnsembleSpec(
                name=e.get("name", f"ensemble{i}"), members=members,
                weights=tuple(e["weights"]) if e.get("weights") is not None else None,
                aggregation=e.get("aggregation", "sum_of_probabilities"),
            )
        except ValueError as exc:
            problems.append(f"ensembles[{i}]: {exc}")
            continue
        if spec.name in names:
            problems.append(f"duplicate ensemble name {spec.name!r}")
        names.add(spec.name)
        ensembles.append(spec)

    eval_split = raw.get("eval_split", "test")
    if eval_split not in ("val", "test"):
        problems.append(f"eval_split must be 'val' or 'test', got {eval_split!r}")
    parallelism = raw.get("parallelism", 1)
    if not isinstance(parallelism, int) or parallelism < 1:
        problems.append("parallelism must be a positive integer")
    input_size = _size(raw.get("input_size"), "input_size", problems)
    min_side = raw.get("min_side", 64)
    if not isinstance(min_side, int) or min_side < 1:
        problems.append("min_side must be a positive integer")

    if problems:
        raise ValidationError(problems)
    return ExperimentConfig(
        dataset_root=resolve(raw["dataset_root"]),
        runs=tuple(runs),
        output_dir=resolve(raw.get("output_dir", "output")),
        global_seed=seed,
        class_subdirs=tuple(raw["class_subdirs"]) if raw.get("class_subdirs") else None,
        min_side=min_side,
        split=split,
        augmentation=augmentation,
        augment_eval=bool(raw.get("augment_eval", False)),
        input_size=input_size,
        transfer=transfer,
        training=training,
        ensembles=tuple(ensembles),
        eval_split=eval_split,
        reject_log=resolve(raw.get("reject_log")),
        parallelism=parallelism,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent)


def full_study_config(dataset_root: str = "data/breast_histology", output_dir: str = "output/full_study") -> dict:
    """Raw config for the full study: six scratch runs, six transfer runs, DIR ensemble."""
    archs = [a.value for a in list_architectures()]
    return {
        "spec_version": SPEC_VERSION,
        "dataset_root": dataset_root,
        "output_dir": output_dir,
        "global_seed": 42,
        "runs": [{"arch": a, "mode": m} for m in MODES for a in archs],
        "training": {"max_epochs": 175, "patience": 10, "learning_rate": 1e-4, "batch_size": 32},
        "augmentation": {"variants_per_image": 10},
        "transfer": {"weights": "hub", "freeze": "all_backbone"},
        "ensembles": [{"name": "DIR", "members": list(DIR_MEMBERS)}],
    }
