"""Exception hierarchy shared by every stage of the benchmark."""


class BenchError(Exception):
    """Base class for all harness errors."""


# data / augmentation
class DataError(BenchError):
    pass


class MissingRoot(DataError):
    pass


class NoClassesFound(DataError):
    pass


class EmptyClass(DataError):
    pass


class InvalidSpec(DataError, ValueError):
    pass


class AlreadySplit(DataError):
    pass


class DecodeFailure(DataError):
    def __init__(self, sample_id, reason=""):
        super().__init__(f"cannot decode sample {sample_id!r}: {reason}")
        self.sample_id = sample_id


class IoFailure(DataError):
    pass


class AlreadyExpanded(DataError):
    pass


class VariantOutOfRange(DataError, IndexError):
    pass


# model zoo
class ModelError(BenchError):
    pass


class UnknownArchitecture(ModelError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class WeightsUnavailable(ModelError):
    pass


class UnsupportedInputSize(ModelError, ValueError):
    pass


class NotTransferMode(ModelError):
    pass


# trainer
class TrainingError(BenchError):
    pass


class EmptySplit(TrainingError):
    pass


class DivergedLoss(TrainingError):
    def __init__(self, epoch, history=None):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.history = history


class CheckpointCorrupt(TrainingError):
    pass


class ClassCountMismatch(TrainingError):
    pass


# ensemble
class EnsembleError(BenchError):
    pass


class SampleSetMismatch(EnsembleError):
    pass


class ClassSetMismatch(EnsembleError):
    pass


class LabelDisagreement(EnsembleError):
    pass


class ShapeMismatch(EnsembleError):
    pass


class ZeroRow(EnsembleError):
    pass


class MemberMissing(EnsembleError):
    pass


class ConfigHashMismatch(EnsembleError):
    pass


# metrics
class MetricsError(BenchError):
    pass


class LengthMismatch(MetricsError, ValueError):
    pass


class LabelOutOfRange(MetricsError, ValueError):
    pass


class EmptyMatrix(MetricsError, ValueError):
    pass


# config / orchestration
class ConfigError(BenchError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


class RunFailed(BenchError):
    """A per-run failure, tagged with the run id that produced it."""

    def __init__(self, run_id, cause, bundle=None):
        super().__init__(f"[{run_id}] {type(cause).__name__}: {cause}")
        self.run_id = run_id
        self.cause = cause
        self.bundle = bundle
