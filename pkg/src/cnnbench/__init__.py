"""Benchmark harness: six CNNs from scratch, the same CNNs with transfer
learning, and a sum-of-probabilities ensemble, on a folder-per-class image
dataset."""

from .augment import AugmentationSpec, augment_image, build_augmenter, expand_training_set
from .bench import ReportBundle, emit_report, run_experiment
from .config import ExperimentConfig, load_config
from .data import DatasetManifest, SplitSpec, load_batch, scan_dataset, split_manifest, validate_sample
from .ensemble import (
    EnsembleResult,
    EnsembleSpec,
    PredictionMatrix,
    align_matrices,
    ensemble_predict,
    normalize_and_predict,
    sum_of_probabilities,
)
from .metrics import ConfusionMatrix, accuracy, confusion_matrix, curves, per_class_metrics
from .models import ArchId, TransferPolicy, build_model, freeze_backbone, list_architectures
from .training import TrainingConfig, TrainingHistory, early_stop_check, predict, train

__version__ = "0.1.0"
