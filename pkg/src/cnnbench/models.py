"""The six benchmark architectures in scratch or transfer mode.

Every model is ``backbone -> global average pool -> linear(m)``; the
softmax is applied by :meth:`ModelHandle.predict_proba` (training uses the
logits directly, which is the same categorical cross-entropy).

Backbones come from torchvision, except SE-ResNet152 which comes from timm.
Pretrained weights are resolved through a :class:`WeightsProvider` so the
harness can run offline (see :class:`SeededWeights`).
"""

from __future__ import annotations

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torchvision.models as tvm

from .errors import (
    CheckpointCorrupt,
    NotTransferMode,
    UnknownArchitecture,
    UnsupportedInputSize,
    WeightsUnavailable,
)

log = logging.getLogger(__name__)


class ArchId(str, Enum):
    DenseNet121 = "DenseNet121"
    InceptionV3 = "InceptionV3"
    ResNet18 = "ResNet18"
    SEResNet152 = "SEResNet152"
    MobileNetV2 = "MobileNetV2"
    VGG19 = "VGG19"

    def __str__(self):
        return self.value


MODES = ("scratch", "transfer")
FREEZE_POLICIES = ("all_backbone", "last_block_trainable")

# DenseNet201 is reachable by name only; it is not part of the benchmark list
ALIASES = {"DenseNet201": "DenseNet201"}


@dataclass(frozen=True)
class _ArchInfo:
    input_size: tuple[int, int]
    min_side: int
    channels: int


_INFO = {
    "DenseNet121": _ArchInfo((224, 224), 32, 1024),
    "InceptionV3": _ArchInfo((299, 299), 75, 2048),
    "ResNet18": _ArchInfo((224, 224), 32, 512),
    "SEResNet152": _ArchInfo((224, 224), 32, 2048),
    "MobileNetV2": _ArchInfo((224, 224), 32, 1280),
    "VGG19": _ArchInfo((224, 224), 32, 512),
    "DenseNet201": _ArchInfo((224, 224), 32, 1920),
}


def list_architectures() -> list[ArchId]:
    return list(ArchId)


def resolve_arch(name) -> str:
    """Canonical architecture name; tolerant of dashes and case."""
    if isinstance(name, ArchId):
        return name.value
    key = str(name).replace("-", "").replace("_", "").lower()
    for known in (*_INFO, *ALIASES):
        if known.lower() == key:
            return known
    raise UnknownArchitecture(f"unknown architecture {name!r}")


def default_input_size(arch) -> tuple[int, int]:
    return _INFO[resolve_arch(arch)].input_size


@dataclass(frozen=True)
class TransferPolicy:
    freeze: str = "all_backbone"

    def __post_init__(self):
        if self.freeze not in FREEZE_POLICIES:
            raise ValueError(f"unknown freeze policy {self.freeze!r}")


# ---------------------------------------------------------------------------
# full reference models and backbone extraction


def _full_model(arch: str) -> nn.Module:
    if arch == "DenseNet121":
        return tvm.densenet121(weights=None)
    if arch == "DenseNet201":
        return tvm.densenet201(weights=None)
    if arch == "InceptionV3":
        return tvm.inception_v3(weights=None, aux_logits=True, init_weights=True)
    if arch == "ResNet18":
        return tvm.resnet18(weights=None)
    if arch == "SEResNet152":
        import timm
        return timm.create_model("seresnet152", pretrained=False)
    if arch == "MobileNetV2":
        return tvm.mobilenet_v2(weights=None)
    if arch == "VGG19":
        return tvm.vgg19(weights=None)
    raise UnknownArchitecture(arch)


class _InceptionInput(nn.Module):
    """Re-expresses ImageNet-normalized input in the [-1, 1] range Inception weights expect."""

    def forward(self, x):
        scale = x.new_tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1) / 0.5
        shift = (x.new_tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1) - 0.5) / 0.5
        return x * scale + shift


def _backbone(arch: str, full: nn.Module, transfer: bool) -> tuple[nn.Module, list[nn.Module]]:
    """Feature extractor and its last block (the part unfrozen when fine-tuning)."""
    if arch.startswith("DenseNet"):
        feats = full.features
        return nn.Sequential(feats, nn.ReLU()), [feats.denseblock4, feats.norm5]
    if arch == "InceptionV3":
        skip = {"AuxLogits", "avgpool", "dropout", "fc"}
        parts = [(n, m) for n, m in full.named_children() if n not in skip]
        if transfer:
            parts.insert(0, ("transform_input", _InceptionInput()))
        seq = nn.Sequential(OrderedDict(parts))
        return seq, [seq.Mixed_7c]
    if arch in ("ResNet18", "SEResNet152"):
        skip = {"avgpool", "fc", "global_pool"}
        seq = nn.Sequential(OrderedDict((n, m) for n, m in full.named_children() if n not in skip))
        return seq, [seq.layer4]
    if arch == "MobileNetV2":
        return full.features, [full.features[17], full.features[18]]
    if arch == "VGG19":
        return full.features, list(full.features[28:])
    raise UnknownArchitecture(arch)


class ClassifierNet(nn.Module):
    def __init__(self, backbone: nn.Module, channels: int, num_classes: int):
        super().__init__()
        self.backbone = backbone
        self.head = nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(channels, num_classes))

    def forward(self, x):
        return self.head(self.backbone(x))


# ---------------------------------------------------------------------------
# pretrained weight providers


class WeightsProvider:
    """Supplies full-model state dicts for the reference architectures."""

    name = "base"
    normalization = "imagenet"

    def state_dict(self, arch: str) -> dict:
        raise WeightsUnavailable(f"{self.name}: no weights for {arch}")


class HubWeights(WeightsProvider):
    """ImageNet weights downloaded (or read from cache) by torchvision / timm."""

    name = "hub"
    _TV = {
        "DenseNet121": "DenseNet121_Weights",
        "DenseNet201": "DenseNet201_Weights",
        "InceptionV3": "Inception_V3_Weights",
        "ResNet18": "ResNet18_Weights",
        "MobileNetV2": "MobileNet_V2_Weights",
        "VGG19": "VGG19_Weights",
    }

    def state_dict(self, arch):
        try:
            if arch == "SEResNet152":
                import timm
                return timm.create_model("seresnet152", pretrained=True).state_dict()
            weights = getattr(tvm, self._TV[arch]).IMAGENET1K_V1
            return weights.get_state_dict(progress=False)
        except Exception as exc:  # network, cache, hub errors all mean the same here
            raise WeightsUnavailable(f"cannot fetch ImageNet weights for {arch}: {exc}") from exc


class DirWeights(WeightsProvider):
    """Reads ``<directory>/<arch>.pth`` full-model state dicts."""

    name = "dir"

    def __init__(self, directory):
        self.directory = Path(directory)

    def state_dict(self, arch):
        path = self.directory / f"{arch}.pth"
        if not path.is_file():
            raise WeightsUnavailable(f"no weights file {path}")
        try:
            return torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise WeightsUnavailable(f"unreadable weights file {path}: {exc}") from exc


class SeededWeights(WeightsProvider):
    """Deterministic stand-in for pretrained weights when no download is possible.

    Exercises the whole transfer path (loading, freezing, head training) but
    carries no learned features.
    """

    name = "seeded"

    def __init__(self, seed: int = 2024):
        self.seed = seed

    def state_dict(self, arch):
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            return _full_model(arch).state_dict()


def provider_from_name(spec: str | None) -> WeightsProvider:
    """``hub`` | ``seeded`` | ``seeded:<int>`` | ``dir:<path>``."""
    if spec is None or spec == "hub":
        return HubWeights()
    if spec == "seeded":
        return SeededWeights()
    if spec.startswith("seeded:"):
        return SeededWeights(int(spec.split(":", 1)[1]))
    if spec.startswith("dir:"):
        return DirWeights(spec.split(":", 1)[1])
    raise ValueError(f"unknown weights source {spec!r}")


# ---------------------------------------------------------------------------


@dataclass
class ModelHandle:
    arch: str
    mode: str
    input_size: tuple[int, int]
    num_classes: int
    net: ClassifierNet
    last_block: list[nn.Module] = field(default_factory=list, repr=False)
    policy: TransferPolicy | None = None
    normalization: str = "unit"
    weights_source: str | None = None

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    @property
    def trainable_parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters() if p.requires_grad)

    def trainable_parameters(self):
        return [p for p in self.net.parameters() if p.requires_grad]

    def set_train_mode(self):
        """Training mode, except frozen batch-norm layers keep their statistics."""
        self.net.train()
        for mod in self.net.backbone.modules():
            if isinstance(mod, nn.modules.batchnorm._BatchNorm):
                if not any(p.requires_grad for p in mod.parameters()):
                    mod.eval()

    def to_tensor(self, batch: np.ndarray) -> torch.Tensor:
        """(N, h, w, 3) array -> (N, 3, h, w) float tensor."""
        return torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32)).permute(0, 3, 1, 2)

    @torch.no_grad()
    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        self.net.eval()
        if len(batch) == 0:
            return np.zeros((0, self.num_classes), dtype=np.float64)
        logits = self.net(self.to_tensor(batch)).double()
        return torch.softmax(logits, dim=1).numpy()

    def describe(self) -> dict:
        return {
            "arch": self.arch,
            "mode": self.mode,
            "num_classes": self.num_classes,
            "input_size": list(self.input_size),
            "normalization": self.normalization,
            "freeze": self.policy.freeze if self.policy else None,
            "weights_source": self.weights_source,
            "parameter_count": self.parameter_count,
            "trainable_parameter_count": self.trainable_parameter_count,
        }


def _assemble(arch, mode, num_classes, input_size, seed, full_state=None) -> ModelHandle:
    info = _INFO[arch]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        full = _full_model(arch)
        if full_state is not None:
            full.load_state_dict(full_state)
        backbone, last = _backbone(arch, full, transfer=(mode == "transfer"))
        net = ClassifierNet(backbone, info.channels, num_classes)
    return ModelHandle(
        arch=arch, mode=mode, input_size=tuple(input_size), num_classes=num_classes,
        net=net, last_block=last,
        normalization="imagenet" if mode == "transfer" else "unit",
    )


def build_model(arch, mode: str = "scratch", num_classes: int = 2, policy: TransferPolicy | None = None,
                input_size=None, seed: int = 0, provider: WeightsProvider | None = None) -> ModelHandle:
    """Instantiate ``arch`` as a from-scratch or transfer-learning classifier."""
    arch = resolve_arch(arch)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    info = _INFO[arch]
    input_size = tuple(input_size) if input_size is not None else info.input_size
    if min(input_size) < info.min_side:
        raise UnsupportedInputSize(f"{arch} needs inputs of at least {info.min_side}px, got {input_size}")

    if mode == "scratch":
        return _assemble(arch, mode, num_classes, input_size, seed)

    provider = provider if provider is not None else HubWeights()
    state = provider.state_dict(arch)
    try:
        handle = _assemble(arch, mode, num_classes, input_size, seed, full_state=state)
    except RuntimeError as exc:
        raise WeightsUnavailable(f"{provider.name} weights do not fit {arch}: {exc}") from exc
    handle.weights_source = provider.name
    handle.normalization = provider.normalization
    return freeze_backbone(handle, policy or TransferPolicy())


def freeze_backbone(handle: ModelHandle, policy: TransferPolicy) -> ModelHandle:
    if handle.mode != "transfer":
        raise NotTransferMode(f"{handle.arch} is a {handle.mode} model")
    for p in handle.net.backbone.parameters():
        p.requires_grad_(False)
    if policy.freeze == "last_block_trainable":
        for block in handle.last_block:
            for p in block.parameters():
                p.requires_grad_(True)
    for p in handle.net.head.parameters():
        p.requires_grad_(True)
    handle.policy = policy
    return handle


# ---------------------------------------------------------------------------
# checkpoints: <dir>/best.pt + <dir>/best.json


def save_checkpoint(handle: ModelHandle, directory, epoch: int, val_loss: float, extra=None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    weights = directory / "best.pt"
    torch.save(handle.net.state_dict(), weights)
    meta = {
        "arch": handle.arch,
        "mode": handle.mode,
        "num_classes": handle.num_classes,
        "input_size": list(handle.input_size),
        "epoch": epoch,
        "val_loss": val_loss,
        "normalization": handle.normalization,
        "freeze": handle.policy.freeze if handle.policy else None,
    }
    meta.update(extra or {})
    (directory / "best.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return weights


def read_sidecar(checkpoint) -> dict:
    path = Path(checkpoint).with_suffix(".json")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CheckpointCorrupt(f"unreadable checkpoint sidecar {path}: {exc}") from exc


def load_checkpoint(checkpoint) -> ModelHandle:
    """Rebuild the network described by the sidecar and load ``best.pt`` into it."""
    checkpoint = Path(checkpoint)
    meta = read_sidecar(checkpoint)
    try:
        handle = _assemble(resolve_arch(meta["arch"]), meta["mode"], int(meta["num_classes"]),
                           tuple(meta["input_size"]), seed=0)
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        handle.net.load_state_dict(state)
    except Exception as exc:  # torch raises a zoo of types for damaged files
        raise CheckpointCorrupt(f"cannot load checkpoint {checkpoint}: {exc}") from exc
    handle.normalization = meta.get("normalization", handle.normalization)
    if meta.get("freeze"):
        handle.policy = TransferPolicy(meta["freeze"])
    handle.net.eval()
    return handle
