"""Weighted-loss training loop with polynomial LR decay and AdamW updates.

Desk-scale by default (64-pixel crops, a few hundred steps); the large-run
settings (384 crops, 60k steps) are reachable through ``TrainConfig`` but are
not a supported CPU path. The whole loop is deterministic under its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import NODATA
from . import autodiff as ad
from .autodiff import AutodiffError, Tensor
from .model import Segmenter, SwinConfig, normalize_image
from .tiler import REFERENCE_WEIGHTS, read_manifest_weights, read_split


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    crop_size: int = 64
    max_steps: int = 300
    base_lr: float = 1e-2
    weight_decay: float = 0.01
    poly_power: float = 0.9
    seed: int = 0
    batch_size: int = 4
    weights: tuple[float, ...] = REFERENCE_WEIGHTS
    ignore_index: int = NODATA
    clip_norm: float = 0.0  # 0 disables clipping
    log_every: int = 50

    def __post_init__(self):
        if self.max_steps < 1:
            raise TrainError("max_steps must be >= 1")
        if self.crop_size < 1:
            raise TrainError("crop_size must be >= 1")
        if self.batch_size < 1:
            raise TrainError("batch_size must be >= 1")


def poly_lr(step: int, max_steps: int, base_lr: float, power: float = 0.9) -> float:
    """base_lr * (1 - step/max_steps)^power; full rate at 0, zero at the end."""
    if not 0 <= step <= max_steps:
        raise TrainError(f"step {step} outside 0..{max_steps}")
    return base_lr * (1.0 - step / max_steps) ** power


def augment(image: np.ndarray, labels: np.ndarray, crop: int,
            seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random crop plus horizontal flip, identical on both arrays."""
    height, width = labels.shape
    if crop > height or crop > width:
        raise TrainError(f"crop {crop} larger than tile ({height}, {width})")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, height - crop + 1))
    left = int(rng.integers(0, width - crop + 1))
    flip = bool(rng.random() < 0.5)
    img = image[top:top + crop, left:left + crop]
    lab = labels[top:top + crop, left:left + crop]
    if flip:
        img = img[:, ::-1]
        lab = lab[:, ::-1]
    return np.ascontiguousarray(img), np.ascontiguousarray(lab)


class AdamW:
    """Adaptive moments with decoupled weight decay and global-norm clipping.

    Decay applies only to weight matrices (ndim >= 2 and not a bias table);
    norms, biases and the relative-position tables are left undecayed.
"""

    def __init__(self, params: dict[str, Tensor], weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float = 0.0):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def _decayed(self, name: str, p: Tensor) -> bool:
        return p.data.ndim >= 2 and not name.endswith("rel_bias")

    def step(self, lr: float) -> None:
        """Lazy update: parameters the backward pass never reached are skipped
        entirely (no moments, no decay), so off-path parameters stay frozen."""
        self.step_count += 1
        grads = {name: p.grad for name, p in self.params.items()
                 if p.grad is not None}
        if self.clip_norm > 0:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.clip_norm:
                factor = self.clip_norm / norm
                grads = {k: g * factor for k, g in grads.items()}
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, g in grads.items():
            p = self.params[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self._decayed(name, p):
                update = update + self.weight_decay * p.data
            p.data -= (p.data.dtype.type(lr) * update).astype(p.data.dtype)


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    model: Segmenter
    history: list[StepRecord] = field(default_factory=list)

    def log_lines(self) -> list[str]:
        return [f"{r.step}\t{r.lr:.8f}\t{r.loss:.6f}" for r in self.history]


def _batch_loss(model: Segmenter, batch, weights: np.ndarray,
                ignore_index: int) -> Tensor:
    logit_list = [model.forward(img) for img, _ in batch]
    logits = ad.stack(logit_list)
    labels = np.stack([lab for _, lab in batch])
    return ad.weighted_cross_entropy(logits, labels, weights, ignore_index)


def train(dataset_root, train_cfg: TrainConfig, swin_cfg: SwinConfig,
          checkpoint_path=None, log_path=None,
          progress: bool = False) -> TrainResult:
    """Fit a fresh model on the training split of a dataset tree.

    Emits a checkpoint and a ``step<TAB>lr<TAB>loss`` log when paths are
    given. Aborts with the failing step index if the loss goes non-finite.
    """
    tiles = read_split(dataset_root, "training")
    if not tiles:
        raise TrainError(f"{dataset_root}: empty training split")
    manifest_weights = read_manifest_weights(dataset_root)
    weights = np.asarray(train_cfg.weights, dtype=np.float64)
    if manifest_weights is not None and tuple(train_cfg.weights) == REFERENCE_WEIGHTS:
        weights = manifest_weights.w

    model = Segmenter(swin_cfg, seed=train_cfg.seed)
    optimizer = AdamW(model.params, weight_decay=train_cfg.weight_decay,
                      clip_norm=train_cfg.clip_norm)
    rng = np.random.default_rng(train_cfg.seed)
    images = [normalize_image(img) for _, img, _ in tiles]
    labels = [lab for _, _, lab in tiles]

    history: list[StepRecord] = []
    for step in range(train_cfg.max_steps):
        batch = []
        for _ in range(train_cfg.batch_size):
            idx = int(rng.integers(0, len(tiles)))
            crop_seed = int(rng.integers(0, 2 ** 31 - 1))
            batch.append(augment(images[idx], labels[idx],
                                 train_cfg.crop_size, crop_seed))
        model.zero_grad()
        try:
            loss = _batch_loss(model, batch, weights, train_cfg.ignore_index)
        except AutodiffError as e:
            raise AutodiffError(f"step {step}: {e}") from None
        loss_value = float(loss.data)
        if not np.isfinite(loss_value):
            raise AutodiffError(f"step {step}: non-finite loss")
        loss.backward()
        lr = poly_lr(step, train_cfg.max_steps, train_cfg.base_lr,
                     train_cfg.poly_power)
        optimizer.step(lr)
        history.append(StepRecord(step=step, lr=lr, loss=loss_value))
        if progress and (step % train_cfg.log_every == 0 or step == train_cfg.max_steps - 1):
            print(f"step {step}  lr {lr:.6f}  loss {loss_value:.4f}")

    result = TrainResult(model=model, history=history)
    if checkpoint_path is not None:
        model.save(checkpoint_path)
    if log_path is not None:
        Path(log_path).write_text("\n".join(result.log_lines()) + "\n",
                                  encoding="utf-8")
    return result
