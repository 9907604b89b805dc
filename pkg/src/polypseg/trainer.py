"""Losses, the Adam training loop with best-checkpoint tracking, and checkpoint I/O."""

from __future__ import annotations

import io
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from polypseg import metrics
from polypseg.datapipe import ImageSample, blob_samples, random_augment
from polypseg.errors import ConfigError, LoadError, NonFiniteLossError, ShapeError
from polypseg.models import ModelConfig, ModelOutput, SegModel, build_model

log = logging.getLogger(__name__)

LOSSES = ("bce", "dice", "bce+dice")
DICE_SMOOTH = 1.0
CLIP_NORM = 5.0
CHECKPOINT_FORMAT = "polypseg-checkpoint/1"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    learning_rate: float = 1e-4
    loss: str = "bce+dice"
    aux_weight: float = 1.0
    seed: int = 0
    checkpoint_path: Optional[str] = None
    augment: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; valid: {', '.join(LOSSES)}")
        if not 0.0 <= self.aux_weight <= 1.0:
            raise ConfigError("aux_weight must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown train config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"train config is not valid JSON: {exc}") from exc


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_dice: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainHistory":
        return cls([EpochRecord(**json.loads(line)) for line in text.splitlines() if line.strip()])


def _check_pair(logits: torch.Tensor, truth: torch.Tensor):
    if logits.shape != truth.shape:
        raise ShapeError(f"logits {tuple(logits.shape)} and truth {tuple(truth.shape)} differ in shape")


def dice_loss(logits: torch.Tensor, truth: torch.Tensor, eps: float = DICE_SMOOTH) -> torch.Tensor:
    """Soft Dice loss over every pixel in the batch, smoothed by ``eps``."""
    _check_pair(logits, truth)
    p = torch.sigmoid(logits)
    t = truth.to(p.dtype)
    return 1.0 - (2.0 * (p * t).sum() + eps) / (p.sum() + t.sum() + eps)


def bce_loss(logits: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy on logits, in the log-sum-exp stable form."""
    _check_pair(logits, truth)
    t = truth.to(logits.dtype)
    return (logits.clamp(min=0) - logits * t + torch.log1p(torch.exp(-logits.abs()))).mean()


def segmentation_loss(logits, truth, kind: str = "bce+dice") -> torch.Tensor:
    if kind == "bce":
        return bce_loss(logits, truth)
    if kind == "dice":
        return dice_loss(logits, truth)
    if kind == "bce+dice":
        return bce_loss(logits, truth) + dice_loss(logits, truth)
    raise ConfigError(f"unknown loss {kind!r}")


def total_loss(output: ModelOutput, truth: torch.Tensor, config: TrainConfig) -> torch.Tensor:
    """Main loss plus ``aux_weight`` times the loss of each side output."""
    loss = segmentation_loss(output.main, truth, config.loss)
    if config.aux_weight and output.aux:
        loss = loss + config.aux_weight * sum(segmentation_loss(a, truth, config.loss) for a in output.aux)
    return loss


def to_batch(samples: Sequence[ImageSample], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.stack([s.image for s in samples])).to(dtype)
    y = torch.from_numpy(np.stack([s.mask for s in samples])[:, None]).to(dtype)
    return x, y


def _check_divisible(samples: Sequence[ImageSample], depth: int):
    step = 2**depth
    for s in samples:
        h, w = s.shape
        for name, size in (("height", h), ("width", w)):
            if size % step:
                raise ShapeError(f"sample {s.id}: {name} {size} is not divisible by 2^depth = {step}")


def _optimizer(model: SegModel, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate)


def _step(model, optimizer, x, y, config: TrainConfig, epoch: int, step: int) -> float:
    model.train()
    optimizer.zero_grad()
    loss = total_loss(model(x), y, config)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLossError(epoch, step, value)
    loss.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), CLIP_NORM)
    optimizer.step()
    return value


@torch.no_grad()
def validate(model: SegModel, samples: Sequence[ImageSample], config: TrainConfig, threshold: float = 0.5):
    """Mean loss per sample and mean per-image hard DSC."""
    model.eval()
    losses, dices = [], []
    for i in range(0, len(samples), config.batch_size):
        chunk = samples[i : i + config.batch_size]
        x, y = to_batch(chunk)
        out = model(x)
        losses.append(float(total_loss(out, y, config)) * len(chunk))
        pred = (torch.sigmoid(out.main) > threshold).numpy()[:, 0]
        for p, s in zip(pred, chunk):
            dices.append(metrics.score(p, s.mask).dsc)
    return sum(losses) / len(samples), sum(dices) / len(dices)


def train(
    model: SegModel,
    train_set: Sequence[ImageSample],
    val_set: Sequence[ImageSample],
    config: TrainConfig,
    meta: Optional[dict] = None,
) -> tuple[SegModel, TrainHistory]:
    """Fit ``model`` with Adam and global-norm clipping.

    A checkpoint is written to ``config.checkpoint_path`` whenever the
    validation DSC improves. Batch order (and augmentation, when enabled) is
    drawn from ``config.seed``.
    """
    if not train_set or not val_set:
        raise ShapeError("train and validation sets must both be nonempty")
    depth = model.config.depth
    _check_divisible(train_set, depth)
    _check_divisible(val_set, depth)

    rng = random.Random(config.seed)
    optimizer = _optimizer(model, config)
    history = TrainHistory()
    best = -math.inf
    order = list(range(len(train_set)))
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        total, seen = 0.0, 0
        for step, i in enumerate(range(0, len(order), config.batch_size), start=1):
            chunk = [train_set[j] for j in order[i : i + config.batch_size]]
            if config.augment:
                chunk = [random_augment(s, rng.getrandbits(32)) for s in chunk]
            x, y = to_batch(chunk)
            total += _step(model, optimizer, x, y, config, epoch, step) * len(chunk)
            seen += len(chunk)
        val_loss, val_dice = validate(model, val_set, config)
        record = EpochRecord(epoch, total / seen, val_loss, val_dice)
        history.records.append(record)
        log.info("epoch %d train_loss %.4f val_loss %.4f val_dice %.4f", *asdict(record).values())
        if val_dice > best:
            best = val_dice
            if config.checkpoint_path:
                save_checkpoint(model, config.checkpoint_path, meta)
    return model, history


def overfit_sanity(
    arch: str,
    steps: int,
    *,
    base_width: int = 8,
    depth: int = 2,
    size: int = 64,
    learning_rate: float = 1e-3,
    seed: int = 0,
) -> float:
    """Train a tiny model on a fixed 8-sample synthetic batch; return the final bce+dice loss."""
    model = build_model(ModelConfig(arch=arch, base_width=base_width, depth=depth, seed=seed))
    config = TrainConfig(epochs=1, batch_size=8, learning_rate=learning_rate, seed=seed)
    x, y = to_batch(blob_samples(8, size, seed))
    optimizer = _optimizer(model, config)
    for step in range(1, steps + 1):
        _step(model, optimizer, x, y, config, 1, step)
    with torch.no_grad():
        model.train()
        final = float(total_loss(model(x), y, config))
    if not math.isfinite(final):
        raise NonFiniteLossError(1, steps, final)
    return final


def save_checkpoint(model: SegModel, path: Union[str, Path], meta: Optional[dict] = None):
    """One file holding the model config, named parameter tensors and optional metadata."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.config.to_dict(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "meta": meta or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: Union[str, Path]) -> tuple[SegModel, dict]:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"checkpoint {path} not found")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise LoadError(f"{path} is not a polypseg checkpoint")
    model = build_model(ModelConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("meta", {})
