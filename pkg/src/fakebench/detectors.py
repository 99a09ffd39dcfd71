"""Per-(database, region) fake detectors and their training recipes.

Three architectures:

* ``transfer_cnn`` - separable-convolution backbone with a fresh two-way
  head, trained with the two-stage transfer schedule: stage 1 updates only
  the head with the backbone frozen, stage 2 trains the whole network, and
  the checkpoint with the best validation accuracy wins (earliest epoch on
  ties).
* ``capsule`` - truncated convolutional feature extractor (exactly three
  max-pooling stages) feeding 10 primary capsules and 2 output capsules with
  routing-by-agreement; only the capsules are ever trained.
* ``tiny_cnn`` - a small separable-convolution stand-in that exercises the
  same schedule and freeze machinery at desk scale.

"Frozen" is literal: excluded parameter groups are bitwise unchanged after a
training stage. Models run on CPU with a single torch thread so results are
reproducible run to run.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    EmptyDataset,
    IncompatibleWeights,
    ModeError,
    ModelExists,
    NonFiniteLoss,
    ShapeError,
)
from .regions import FaceCrop, RegionKind

ARCHITECTURES = ("transfer_cnn", "capsule", "tiny_cnn")

_torch_configured = False


def _configure_torch() -> None:
    global _torch_configured
    if not _torch_configured:
        torch.set_num_threads(1)  # keeps CPU results reproducible run to run
        _torch_configured = True


@dataclass(frozen=True)
class DetectorConfig:
    architecture: str
    database: str
    region: RegionKind
    input_size: tuple[int, int] = (64, 64)
    seed: int = 0
    class_weights: tuple[float, float] = (1.0, 1.0)  # (real, fake)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        object.__setattr__(self, "region", RegionKind(self.region))
        object.__setattr__(self, "input_size",
                           (int(self.input_size[0]), int(self.input_size[1])))

    def key(self) -> str:
        return f"{self.database}/{self.region.value}/{self.architecture}"


@dataclass(frozen=True)
class TrainSchedule:
    stage1_epochs: int = 3   # head-only ("few epochs"); capsules: ignored
    stage2_epochs: int = 20  # full network
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-4
    batch_size: int = 32
    selection: str = "best_val_accuracy"

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be >= 0")


@dataclass
class Checkpoint:
    epoch: int  # 1-based across both stages; 0 = untrained initial state
    state_dict: dict
    val_accuracy: float
    trace: list  # validation accuracy per epoch
    config: DetectorConfig
    schedule: TrainSchedule
    data_hash: str = ""


def select_best_epoch(trace) -> int:
    """1-based argmax of validation accuracy, earliest epoch on ties."""
    if not trace:
        return 0
    best = max(trace)
    return int(np.argmax(np.array(trace) >= best)) + 1


# --- architectures -----------------------------------------------------------


class SeparableBlock(nn.Module):
    """Depthwise 3x3 + pointwise 1x1 convolution with group norm and ReLU."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.depthwise = nn.Conv2d(c_in, c_in, 3, stride=stride, padding=1, groups=c_in)
        self.pointwise = nn.Conv2d(c_in, c_out, 1)
        self.norm = nn.GroupNorm(4, c_out)

    def forward(self, x):
        return F.relu(self.norm(self.pointwise(self.depthwise(x))))


class SepConvBackbone(nn.Module):
    def __init__(self, widths: tuple[int, ...]):
        super().__init__()
        self.stem = nn.Conv2d(3, widths[0], 3, stride=2, padding=1)
        blocks = []
        for c_in, c_out in zip(widths[:-1], widths[1:]):
            blocks.append(SeparableBlock(c_in, c_out, stride=2))
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = widths[-1]

    def forward(self, x):
        return self.blocks(F.relu(self.stem(x)))


class ConvClassifier(nn.Module):
    """Backbone + global average pool + two-way linear head."""

    def __init__(self, widths: tuple[int, ...]):
        super().__init__()
        self.backbone = SepConvBackbone(widths)
        self.head = nn.Linear(self.backbone.out_channels, 2)

    def forward(self, x):
        feats = self.backbone(x)
        pooled = feats.mean(dim=(2, 3))
        return self.head(pooled)

    def class_scores(self, x):
        """Per-class probabilities (softmax over the two logits)."""
        return F.softmax(self.forward(x), dim=1)

    def gradcam_layer(self) -> nn.Module:
        return self.backbone.blocks[-1].pointwise

    def parameter_groups(self) -> dict[str, list]:
        return {
            "backbone": list(self.backbone.parameters()),
            "head": list(self.head.parameters()),
        }

    trainable_group = "head"  # stage-1 / frozen-stage target


TINY_WIDTHS = (16, 32, 64, 96, 96)
TRANSFER_WIDTHS = (32, 64, 128, 192, 192)


def squash(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Capsule squash: scales magnitude into [0, 1) preserving direction."""
    norm_sq = (v * v).sum(dim=dim, keepdim=True)
    norm = torch.sqrt(norm_sq + 1e-12)
    return (norm_sq / (1.0 + norm_sq)) * (v / norm)


class CapsuleDetector(nn.Module):
    """Truncated conv feature extractor + 10 primary / 2 output capsules."""

    N_PRIMARY = 10
    N_OUTPUT = 2
    PRIMARY_DIM = 8
    OUTPUT_DIM = 4
    ROUTING_ITERATIONS = 2

    def __init__(self):
        super().__init__()
        # three max-pooling stages, mirroring a pretrained extractor truncated
        # at its third pool
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(32, 32, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
        )
        self.primary_conv = nn.Conv2d(32, self.N_PRIMARY * self.PRIMARY_DIM, 3, padding=1)
        self.route_weights = nn.Parameter(
            0.05 * torch.randn(self.N_OUTPUT, self.N_PRIMARY,
                               self.OUTPUT_DIM, self.PRIMARY_DIM))

    def primary_capsules(self, x):
        feats = self.features(x)
        p = self.primary_conv(feats)
        b = p.shape[0]
        p = p.view(b, self.N_PRIMARY, self.PRIMARY_DIM, -1).mean(dim=3)
        return squash(p, dim=2)  # (B, 10, 8)

    def forward(self, x):
        u = self.primary_capsules(x)  # (B, 10, 8)
        # prediction vectors u_hat: (B, 2, 10, 4)
        u_hat = torch.einsum("kjoi,bji->bkjo", self.route_weights, u)
        logits = torch.zeros(u.shape[0], self.N_OUTPUT, self.N_PRIMARY,
                             device=x.device, dtype=x.dtype)
        for _ in range(self.ROUTING_ITERATIONS):
            c = F.softmax(logits, dim=1)
            s = (c.unsqueeze(-1) * u_hat).sum(dim=2)  # (B, 2, 4)
            v = squash(s, dim=2)
            logits = logits + torch.einsum("bkjo,bko->bkj", u_hat, v)
        return v  # output capsule vectors (B, 2, 4)

    def class_scores(self, x):
        lengths = torch.linalg.vector_norm(self.forward(x), dim=2)
        return lengths / (lengths.sum(dim=1, keepdim=True) + 1e-12)

    def gradcam_layer(self) -> nn.Module:
        return self.features[6]  # last conv of the truncated extractor

    def parameter_groups(self) -> dict[str, list]:
        return {
            "features": list(self.features.parameters()),
            "capsules": list(self.primary_conv.parameters()) + [self.route_weights],
        }

    trainable_group = "capsules"


@dataclass
class DetectorModel:
    """A trainable two-way classifier bound to one (database, region) pair."""

    config: DetectorConfig
    module: nn.Module

    @property
    def mode(self) -> str:
        return "train" if self.module.training else "eval"

    def train_mode(self) -> "DetectorModel":
        self.module.train()
        return self

    def eval_mode(self) -> "DetectorModel":
        self.module.eval()
        return self

    def parameter_groups(self) -> dict[str, list]:
        return self.module.parameter_groups()


def _seeded_module(builder, seed: int) -> nn.Module:
    _configure_torch()
    torch.manual_seed(seed)
    return builder()


def _copy_matching(target_params: dict, source_state: dict, prefix: str) -> None:
    for name, param in target_params.items():
        if name not in source_state:
            raise IncompatibleWeights(f"{prefix}: source lacks parameter {name!r}")
        src = source_state[name]
        if tuple(src.shape) != tuple(param.shape):
            raise IncompatibleWeights(
                f"{prefix}: shape mismatch for {name!r}: "
                f"{tuple(src.shape)} vs {tuple(param.shape)}")
    with torch.no_grad():
        for name, param in target_params.items():
            param.copy_(source_state[name])


def build_transfer_detector(config: DetectorConfig,
                            pretrained_backbone: "str | Path | dict" = "random-init"
                            ) -> DetectorModel:
    """Transfer detector: backbone copied from a weight source, fresh head.

    ``pretrained_backbone`` is a checkpoint path, a raw state dict, or the
    ``"random-init"`` sentinel.
    """
    if config.architecture not in ("transfer_cnn", "tiny_cnn"):
        raise ValueError(f"not a transfer architecture: {config.architecture}")
    widths = TINY_WIDTHS if config.architecture == "tiny_cnn" else TRANSFER_WIDTHS
    module = _seeded_module(lambda: ConvClassifier(widths), config.seed)
    if pretrained_backbone != "random-init":
        state = _load_weight_source(pretrained_backbone)
        backbone_params = {n: p for n, p in module.named_parameters()
                          if n.startswith("backbone.")}
        _copy_matching(backbone_params, state, "backbone")
    return DetectorModel(config, module).eval_mode()


def build_capsule_detector(config: DetectorConfig,
                           pretrained_features: "str | Path | dict" = "random-init"
                           ) -> DetectorModel:
    """Capsule detector; the feature extractor may come from a weight source."""
    if config.architecture != "capsule":
        raise ValueError(f"not a capsule architecture: {config.architecture}")
    module = _seeded_module(CapsuleDetector, config.seed)
    if pretrained_features != "random-init":
        state = _load_weight_source(pretrained_features)
        feature_params = {n: p for n, p in module.named_parameters()
                          if n.startswith("features.")}
        _copy_matching(feature_params, state, "features")
    return DetectorModel(config, module).eval_mode()


def build_detector(config: DetectorConfig,
                   weight_source: "str | Path | dict" = "random-init") -> DetectorModel:
    if config.architecture == "capsule":
        return build_capsule_detector(config, weight_source)
    return build_transfer_detector(config, weight_source)


def _load_weight_source(source) -> dict:
    if isinstance(source, dict):
        return source
    path = Path(source)
    if not path.exists():
        raise IncompatibleWeights(f"weight source {path} not found")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    return payload.get("state_dict", payload)


# --- training ----------------------------------------------------------------


@dataclass
class TrainingSet:
    """Preprocessed samples plus the provenance needed for identity-safe
    internal validation splits."""

    inputs: torch.Tensor  # (N, 3, H, W) float32 in [-1, 1]
    labels: torch.Tensor  # (N,) long; 0 = real, 1 = fake
    identities: list[str]
    video_ids: list[str]

    def __len__(self) -> int:
        return int(self.inputs.shape[0])


def _internal_split(data: TrainingSet, fraction: float = 0.9,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Identity-disjoint 90/10 train/validation indices within the dev set."""
    import random as _random

    ids = sorted(set(data.identities))
    if len(ids) < 2:
        idx = np.arange(len(data))
        return idx, idx  # validate on train when a real split is impossible
    rng = _random.Random(seed)
    shuffled = list(ids)
    rng.shuffle(shuffled)
    n_train = min(max(round(len(ids) * fraction), 1), len(ids) - 1)
    train_ids = set(shuffled[:n_train])
    flags = np.array([i in train_ids for i in data.identities])
    return np.nonzero(flags)[0], np.nonzero(~flags)[0]


def _check_finite(loss: torch.Tensor) -> None:
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"loss became {float(loss)}; aborting training")


def _cross_entropy_loss(module, x, y, class_weights):
    w = torch.tensor(class_weights, dtype=x.dtype)
    return F.cross_entropy(module(x), y, weight=w)


def _margin_loss(module, x, y, class_weights,
                 m_pos: float = 0.9, m_neg: float = 0.1, lam: float = 0.5):
    v = module(x)
    lengths = torch.linalg.vector_norm(v, dim=2)  # (B, 2)
    t = F.one_hot(y, num_classes=2).to(x.dtype)
    pos = t * F.relu(m_pos - lengths) ** 2
    neg = lam * (1 - t) * F.relu(lengths - m_neg) ** 2
    w = torch.tensor(class_weights, dtype=x.dtype)[y].unsqueeze(1)
    return (w * (pos + neg)).sum(dim=1).mean()


def _accuracy(model_scores: torch.Tensor, labels: torch.Tensor) -> float:
    return float((model_scores.argmax(dim=1) == labels).float().mean())


def _run_training(model: DetectorModel, dev_data: TrainingSet,
                  schedule: TrainSchedule, stages, loss_fn) -> Checkpoint:
    """Shared loop: ``stages`` is a list of (epochs, lr, parameters)."""
    _configure_torch()
    if len(dev_data) == 0:
        raise EmptyDataset("no training samples")
    module = model.module
    train_idx, val_idx = _internal_split(dev_data, seed=model.config.seed)
    x_train, y_train = dev_data.inputs[train_idx], dev_data.labels[train_idx]
    x_val, y_val = dev_data.inputs[val_idx], dev_data.labels[val_idx]

    rng = np.random.default_rng(model.config.seed)
    trace: list[float] = []
    best_state = copy.deepcopy(module.state_dict())
    best_epoch = 0
    best_acc = -1.0

    def validate() -> float:
        module.eval()
        with torch.no_grad():
            acc = _accuracy(model_class_scores(module, x_val), y_val)
        return acc

    epoch = 0
    for epochs, lr, params in stages:
        if epochs == 0 or not params:
            continue
        optimizer = torch.optim.Adam(params, lr=lr)
        for _ in range(epochs):
            module.train()
            order = rng.permutation(len(x_train))
            for start in range(0, len(order), schedule.batch_size):
                batch = order[start:start + schedule.batch_size]
                optimizer.zero_grad()
                loss = loss_fn(module, x_train[batch], y_train[batch],
                               model.config.class_weights)
                _check_finite(loss)
                loss.backward()
                optimizer.step()
            epoch += 1
            acc = validate()
            trace.append(acc)
            if acc > best_acc:
                best_acc = acc
                best_epoch = epoch
                best_state = copy.deepcopy(module.state_dict())

    if trace:
        assert best_epoch == select_best_epoch(trace)
    module.load_state_dict(best_state)
    module.eval()
    return Checkpoint(
        epoch=best_epoch,
        state_dict=best_state,
        val_accuracy=max(best_acc, 0.0) if trace else 0.0,
        trace=trace,
        config=model.config,
        schedule=schedule,
        data_hash=f"n={len(dev_data)}",
    )


def model_class_scores(module: nn.Module, x: torch.Tensor) -> torch.Tensor:
    return module.class_scores(x)


def train_transfer(model: DetectorModel, dev_data: TrainingSet,
                   schedule: TrainSchedule) -> Checkpoint:
    """Two-stage transfer schedule: head-only, then the full network."""
    groups = model.parameter_groups()
    stages = [
        (schedule.stage1_epochs, schedule.lr_stage1, groups["head"]),
        (schedule.stage2_epochs, schedule.lr_stage2,
         groups["backbone"] + groups["head"]),
    ]
    return _run_training(model, dev_data, schedule, stages, _cross_entropy_loss)


def train_capsule(model: DetectorModel, dev_data: TrainingSet,
                  schedule: TrainSchedule) -> Checkpoint:
    """Capsule training: only capsule parameters are ever updated."""
    groups = model.parameter_groups()
    epochs = schedule.stage1_epochs + schedule.stage2_epochs
    stages = [(epochs, schedule.lr_stage1, groups["capsules"])]
    return _run_training(model, dev_data, schedule, stages, _margin_loss)


def train_detector(model: DetectorModel, dev_data: TrainingSet,
                   schedule: TrainSchedule) -> Checkpoint:
    if model.config.architecture == "capsule":
        return train_capsule(model, dev_data, schedule)
    return train_transfer(model, dev_data, schedule)


# --- prediction --------------------------------------------------------------


def preprocess_crop(crop: FaceCrop, input_size: tuple[int, int]) -> torch.Tensor:
    """Resize (bilinear) and scale per channel to [-1, 1]; returns (1,3,H,W)."""
    px = crop.pixels
    if px.shape[2] == 1:
        px = np.repeat(px, 3, axis=2)
    if px.shape[2] != 3:
        raise ShapeError(f"expected 1 or 3 channels, got {px.shape[2]}")
    t = torch.from_numpy(px.copy()).permute(2, 0, 1).float()
    t = t.unsqueeze(0) / 127.5 - 1.0
    if t.shape[2:] != tuple(input_size):
        t = F.interpolate(t, size=tuple(input_size), mode="bilinear",
                          align_corners=False)
    return t


def predict(model: DetectorModel, crop: FaceCrop) -> float:
    """Fake probability in [0, 1]; requires eval mode, deterministic."""
    _configure_torch()
    if model.mode != "eval":
        raise ModeError("predict requires eval mode")
    x = preprocess_crop(crop, model.config.input_size)
    with torch.no_grad():
        scores = model.module.class_scores(x)
    return float(scores[0, 1])


def predict_batch(model: DetectorModel, crops) -> list[float]:
    if model.mode != "eval":
        raise ModeError("predict requires eval mode")
    _configure_torch()
    xs = torch.cat([preprocess_crop(c, model.config.input_size) for c in crops])
    with torch.no_grad():
        scores = model.module.class_scores(xs)
    return [float(s) for s in scores[:, 1]]


# --- model registry ----------------------------------------------------------


def checkpoint_path(registry_root: str | Path, database: str,
                    region: RegionKind, architecture: str) -> Path:
    return (Path(registry_root) / database / RegionKind(region).value /
            architecture / "checkpoint.pt")


def save_checkpoint(registry_root: str | Path, checkpoint: Checkpoint,
                    overwrite: bool = False) -> Path:
    """Store a checkpoint under ``<database>/<region>/<architecture>/``.

    One model per key: a second save under an existing key raises ModelExists
    unless ``overwrite`` is set.
    """
    cfg = checkpoint.config
    path = checkpoint_path(registry_root, cfg.database, cfg.region, cfg.architecture)
    if path.exists() and not overwrite:
        raise ModelExists(f"model already registered at {cfg.key()}")
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "state_dict": checkpoint.state_dict,
        "epoch": checkpoint.epoch,
        "val_accuracy": checkpoint.val_accuracy,
        "trace": checkpoint.trace,
        "config": {
            "architecture": cfg.architecture,
            "database": cfg.database,
            "region": cfg.region.value,
            "input_size": list(cfg.input_size),
            "seed": cfg.seed,
            "class_weights": list(cfg.class_weights),
        },
        "schedule": asdict(checkpoint.schedule),
        "data_hash": checkpoint.data_hash,
    }
    torch.save(payload, path)
    return path


def load_registered_model(registry_root: str | Path, database: str,
                          region: RegionKind, architecture: str) -> DetectorModel:
    path = checkpoint_path(registry_root, database, region, architecture)
    if not path.exists():
        raise FileNotFoundError(path)
    payload = torch.load(path, map_location="cpu", weights_only=True)
    raw = payload["config"]
    config = DetectorConfig(
        architecture=raw["architecture"],
        database=raw["database"],
        region=RegionKind(raw["region"]),
        input_size=tuple(raw["input_size"]),
        seed=int(raw["seed"]),
        class_weights=tuple(raw["class_weights"]),
    )
    model = build_detector(config)
    model.module.load_state_dict(payload["state_dict"])
    return model.eval_mode()
