"""Losses, optimizer, learning-rate schedule, and the fold training loop.

Two training setups share one model topology. Setup A is binary
misogyny identification (one output, plain binary cross-entropy).
Setup B predicts the four sub-category labels with support-weighted BCE
plus a teacher-forcing term that ties the maximum sub-category
probability to the binary target; the two terms mix 0.7/0.3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, zero_grads
from .ensemble import taskA_macro_f1, weighted_f1
from .nn import NumericError

SUB_CLASSES = ("shm", "ste", "obj", "vio")
PROB_EPS = 1e-12


@dataclass
class LossWeights:
    """Support-derived class weights for [shm, ste, obj, vio]; sums to 1."""
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.shape != (4,) or np.any(self.w <= 0):
            raise ValueError("need four strictly positive class weights")


@dataclass
class TrainConfig:
    setup: str = "B"                 # "A" or "B"
    epochs: int = 50
    batch_size: int = 16             # 32 for fusion models
    base_lr: float = 2e-5            # 5e-6 for fusion models
    warmup_epochs: int = 4
    dropout: float = 0.5
    patience: int = 4
    mix: tuple[float, float] = (0.7, 0.3)
    seed: int = 0
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.setup not in ("A", "B"):
            raise ValueError(f"unknown setup {self.setup!r}")
        if not 0 < self.warmup_epochs < self.epochs:
            raise ValueError("need 0 < warmup epochs < total epochs")

    @property
    def n_outputs(self) -> int:
        return 1 if self.setup == "A" else 4


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1: float
    lr: float


def bce(p: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped away from 0 and 1."""
    y = np.asarray(y, dtype=np.float64)
    pc = p.clip(PROB_EPS, 1.0 - PROB_EPS)
    return -(Tensor(y) * pc.log() + Tensor(1.0 - y) * (1.0 - pc).log()).mean()


def class_weights(counts, total: int) -> LossWeights:
    """w_c proportional to total/count(c), normalized to sum to 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError(f"degenerate class with zero support: {counts}")
    inv = total / counts
    return LossWeights(inv / inv.sum())


def weighted_bce(p: Tensor, y: np.ndarray, weights: LossWeights) -> Tensor:
    """Sum over the four classes of w_c * BCE on that class column."""
    total = None
    for c in range(4):
        term = bce(p[:, c], y[:, c]) * weights.w[c]
        total = term if total is None else total + term
    return total


def teacher_forcing_loss(p: Tensor, y_mis: np.ndarray) -> Tensor:
    """MSE between max of the sub-category probabilities and the binary target."""
    p_a = p.max(axis=-1)
    diff = p_a - Tensor(np.asarray(y_mis, dtype=np.float64))
    return (diff * diff).mean()


def combined_loss(l1: Tensor, l2: Tensor,
                  mix: tuple[float, float] = (0.7, 0.3)) -> Tensor:
    return l1 * mix[0] + l2 * mix[1]


def setup_loss(p: Tensor, y_mis: np.ndarray, y_sub: np.ndarray,
               config: TrainConfig,
               weights: LossWeights | None) -> Tensor:
    if config.setup == "A":
        return bce(p, y_mis.reshape(-1, 1))
    return combined_loss(weighted_bce(p, y_sub, weights),
                         teacher_forcing_loss(p, y_mis), config.mix)


def lr_at(step: int, base_lr: float, warmup_steps: int,
          total_steps: int) -> float:
    """Linear ramp 0 -> base over the warm-up, then linear decay to 0."""
    if step <= 0:
        return 0.0
    if step <= warmup_steps:
        return base_lr * step / warmup_steps
    if step >= total_steps:
        return 0.0
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


class AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}")
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
        self.t += 1
        bc1 = 1 - self.beta1 ** self.t
        bc2 = 1 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                    + self.weight_decay * p.data)


def snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def restore(params: dict[str, Tensor], values: dict[str, np.ndarray]) -> None:
    for k, p in params.items():
        p.data = values[k].copy()


def select_top2(records: list[EpochRecord]) -> list[int]:
    """Epochs of the two best validation scores; ties go to earlier epochs."""
    order = sorted(records, key=lambda r: (-r.val_f1, r.epoch))
    return [r.epoch for r in order[:2]]


def validation_f1(probs: np.ndarray, y_mis: np.ndarray, y_sub: np.ndarray,
                  setup: str) -> float:
    labels = (probs >= 0.5).astype(int)
    if setup == "A":
        return taskA_macro_f1(labels[:, 0], y_mis)
    return weighted_f1(labels, y_sub)


def train_model(trainable, y_mis: np.ndarray, y_sub: np.ndarray,
                val_y_mis: np.ndarray, val_y_sub: np.ndarray,
                config: TrainConfig,
                weights: LossWeights | None = None,
                log=None) -> tuple[float, dict[str, np.ndarray],
                                   list[EpochRecord]]:
    """Run one fold: epochs with early stopping and top-2 averaging.

    `trainable` exposes `params` (name -> Tensor), `forward_batch(indices,
    rng)` over the training split, and `eval_val()` returning eval-mode
    validation probabilities. Returns (best validation F1, final averaged
    parameters, per-epoch records).
    """
    n_train = len(y_mis)
    if n_train == 0:
        raise ValueError("empty training fold")
    if config.setup == "B" and weights is None:
        weights = class_weights(np.maximum(y_sub.sum(axis=0), 1), n_train)

    rng = np.random.default_rng(config.seed)
    optimizer = AdamW(trainable.params, weight_decay=config.weight_decay)
    n_batches = max(1, int(np.ceil(n_train / config.batch_size)))
    warmup_steps = config.warmup_epochs * n_batches
    total_steps = config.epochs * n_batches

    records: list[EpochRecord] = []
    checkpoints: dict[int, dict[str, np.ndarray]] = {}
    best_f1 = -np.inf
    stale = 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        lr = 0.0
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            if len(idx) == 0:
                continue
            zero_grads(trainable.params)
            out = trainable.forward_batch(idx, rng)
            loss = setup_loss(out.p, y_mis[idx], y_sub[idx], config, weights)
            loss.backward()
            step += 1
            lr = lr_at(step, config.base_lr, warmup_steps, total_steps)
            optimizer.step(lr)
            epoch_loss += float(loss.data) * len(idx)
        epoch_loss /= n_train

        probs = trainable.eval_val()
        f1 = validation_f1(probs, val_y_mis, val_y_sub, config.setup)
        records.append(EpochRecord(epoch, epoch_loss, f1, lr))
        checkpoints[epoch] = snapshot(trainable.params)
        if log is not None:
            log(records[-1])
        if f1 > best_f1:
            best_f1 = f1
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    top = select_top2(records)
    if len(top) == 1:
        final = checkpoints[top[0]]
    else:
        from .checkpoint import average_checkpoints
        final = average_checkpoints(checkpoints[top[0]], checkpoints[top[1]])
    restore(trainable.params, final)
    return best_f1, final, records
