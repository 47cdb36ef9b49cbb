"""Training recipe: weighted cross-entropy, SGD, warm-up + cosine annealing.

The loss is a weighted mean, L = sum_i w[y_i] * ce_i / sum_i w[y_i], so
rescaling both class weights leaves gradients unchanged. The learning rate
holds at base_lr for the warm-up epochs, then follows a half cosine that
reaches eta_min exactly at the final epoch. Everything is float64 and
deterministic under the config seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import DegenerateDataError, InvalidConfigError, InvalidInputError
from ..metrics import ScoredItem, aupr, auroc
from .model import TinyResNet, Workspace, softmax

POSITIVE_CLASS = 1


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int
    batch_size: int = 32
    base_lr: float = 0.001
    warmup_epochs: int = 20
    eta_min: float = 0.0
    class_weights: tuple[float, float] | None = None  # None -> inverse class frequency
    seed: int = 0
    threshold: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise InvalidConfigError(f"threshold {self.threshold} outside (0, 1)")
        if self.warmup_epochs >= self.total_epochs:
            raise InvalidConfigError(
                f"warmup_epochs {self.warmup_epochs} must be < total_epochs {self.total_epochs}"
            )
        if self.warmup_epochs < 0 or self.batch_size < 1:
            raise InvalidConfigError("warmup_epochs must be >= 0 and batch_size >= 1")
        if self.base_lr <= 0 or self.eta_min < 0:
            raise InvalidConfigError("base_lr must be > 0 and eta_min >= 0")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise InvalidConfigError(f"class_weights must be positive, got {self.class_weights}")

    def to_json(self) -> dict:
        return {
            "total_epochs": self.total_epochs,
            "batch_size": self.batch_size,
            "base_lr": self.base_lr,
            "warmup_epochs": self.warmup_epochs,
            "eta_min": self.eta_min,
            "class_weights": list(self.class_weights) if self.class_weights else None,
            "seed": self.seed,
            "threshold": self.threshold,
        }

    @staticmethod
    def from_json(doc: dict) -> "TrainConfig":
        weights = doc.get("class_weights")
        return TrainConfig(
            total_epochs=doc["total_epochs"],
            batch_size=doc["batch_size"],
            base_lr=doc["base_lr"],
            warmup_epochs=doc["warmup_epochs"],
            eta_min=doc["eta_min"],
            class_weights=tuple(weights) if weights else None,
            seed=doc["seed"],
            threshold=doc["threshold"],
        )


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for an epoch: constant warm-up, then half-cosine decay.

    The cosine spans the annealed epochs so that the first annealed epoch gets
    base_lr (cos 0) and the final epoch gets exactly eta_min (cos pi).
    """
    if not 0 <= epoch < cfg.total_epochs:
        raise InvalidInputError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr
    span = cfg.total_epochs - 1 - cfg.warmup_epochs
    if span == 0:
        return cfg.base_lr
    t = (epoch - cfg.warmup_epochs) / span
    return cfg.eta_min + 0.5 * (cfg.base_lr - cfg.eta_min) * (1.0 + math.cos(math.pi * t))


def weighted_ce_loss(
    logits: np.ndarray, targets: np.ndarray, weights: tuple[float, float]
) -> float:
    """Weighted mean cross-entropy with log-sum-exp stabilization.

    L = sum_i w[y_i] * (logsumexp(z_i) - z_i[y_i]) / sum_i w[y_i]; a batch
    whose target weights are all zero contributes zero loss.
    """
    loss, _ = _loss_and_dlogits(np.asarray(logits, dtype=np.float64), targets, weights)
    return loss


def _loss_and_dlogits(
    logits: np.ndarray, targets: np.ndarray, weights: tuple[float, float]
) -> tuple[float, np.ndarray]:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.intp))
    if len(targets) == 0:
        raise InvalidInputError("batch must be nonempty")
    w = np.asarray(weights, dtype=np.float64)[targets]
    denom = w.sum()
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    ce = lse - logits[np.arange(len(targets)), targets]
    if denom == 0.0:
        return 0.0, np.zeros_like(logits)
    probs = softmax(logits)
    onehot = np.zeros_like(logits)
    onehot[np.arange(len(targets)), targets] = 1.0
    dlogits = (w[:, None] * (probs - onehot)) / denom
    return float((w * ce).sum() / denom), dlogits


def backward(
    net: TinyResNet,
    batch: np.ndarray,
    targets: np.ndarray,
    weights: tuple[float, float],
) -> dict[str, np.ndarray]:
    """Gradient of the weighted CE loss w.r.t. every parameter, keyed by name."""
    logits, _, cache = net.forward_with_cache(batch)
    _, dlogits = _loss_and_dlogits(logits, targets, weights)
    return net.backward_from_cache(dlogits, cache)


def predict_proba(
    net: TinyResNet, batch: np.ndarray, ws: Workspace | None = None
) -> np.ndarray:
    """Positive-class probability for each sample in the batch."""
    logits, _, _ = net.forward_with_cache(batch, ws)
    return softmax(logits)[:, POSITIVE_CLASS]


def predict(net: TinyResNet, patch, threshold: float = 0.9) -> tuple[float, bool]:
    """(p_positive, label); positive only when p is strictly above the threshold."""
    values = patch.values if hasattr(patch, "values") else np.asarray(patch)
    p = float(predict_proba(net, values[None] if values.ndim == 3 else values)[0])
    return p, p > threshold


@dataclass
class PatchDataset:
    """Preprocessed patches split into train/val, with optional per-item metadata."""

    x_train: np.ndarray                  # (N, 1, H, W) float64
    y_train: np.ndarray                  # (N,) int, 1 = nodule
    x_val: np.ndarray
    y_val: np.ndarray
    meta_val: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if len(self.x_train) != len(self.y_train) or len(self.x_val) != len(self.y_val):
            raise InvalidInputError("patch/label counts differ")


def inverse_frequency_weights(y: np.ndarray) -> tuple[float, float]:
    """w_c = n / (2 * n_c): rarer class weighted up, mean weight ~1."""
    n = len(y)
    n_pos = int(np.sum(y == POSITIVE_CLASS))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDataError(
            f"training data has a single class ({n_pos} positives of {n})"
        )
    return n / (2.0 * n_neg), n / (2.0 * n_pos)


def _val_rank_metrics(
    net: TinyResNet,
    x_val: np.ndarray,
    y_val: np.ndarray,
    ws: Workspace | None = None,
    eval_batch: int = 64,
) -> tuple[float | None, float | None]:
    if len(x_val) == 0:
        return None, None
    scores = np.concatenate(
        [predict_proba(net, x_val[i : i + eval_batch], ws) for i in range(0, len(x_val), eval_batch)]
    )
    items = [ScoredItem(score=float(s), truth=bool(t)) for s, t in zip(scores, y_val)]
    n_pos = int(np.sum(y_val == POSITIVE_CLASS))
    val_auroc = auroc(items) if 0 < n_pos < len(items) else None
    val_aupr = aupr(items) if n_pos > 0 else None
    return val_auroc, val_aupr


def train(
    net: TinyResNet, dataset: PatchDataset, cfg: TrainConfig
) -> tuple[TinyResNet, list[dict]]:
    """Mini-batch SGD over shuffled epochs; returns the net and per-epoch history.

    Batches are cfg.batch_size with the last partial batch kept; updates are
    p <- p - lr_at(epoch) * grad. Bitwise deterministic for a fixed seed.
    """
    if cfg.class_weights is None:
        weights = inverse_frequency_weights(dataset.y_train)
    else:
        if len(np.unique(dataset.y_train)) < 2:
            raise DegenerateDataError("training data has a single class")
        weights = cfg.class_weights
    rng = np.random.default_rng(cfg.seed)
    n = len(dataset.x_train)
    history: list[dict] = []
    params = net.param_items()
    ws = Workspace()
    # single-threaded BLAS: the small per-layer GEMMs lose badly to thread
    # wake-up cost on shared vCPUs, and this also pins the reduction order
    with threadpool_limits(limits=1, user_api="blas"):
        for epoch in range(cfg.total_epochs):
            lr = lr_at(cfg, epoch)
            order = rng.permutation(n)
            weighted_loss_sum = 0.0
            weight_sum = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                xb, yb = dataset.x_train[idx], dataset.y_train[idx]
                logits, _, cache = net.forward_with_cache(xb, ws)
                loss, dlogits = _loss_and_dlogits(logits, yb, weights)
                grads = net.backward_from_cache(dlogits, cache, ws)
                for name, value in params:
                    value -= lr * grads[name]
                batch_weight = float(np.asarray(weights)[yb].sum())
                weighted_loss_sum += loss * batch_weight
                weight_sum += batch_weight
            val_auroc, val_aupr = _val_rank_metrics(net, dataset.x_val, dataset.y_val, ws)
            history.append(
                {
                    "epoch": epoch,
                    "lr": lr,
                    "train_loss": weighted_loss_sum / weight_sum if weight_sum else 0.0,
                    "val_auroc": val_auroc,
                    "val_aupr": val_aupr,
                }
            )
    return net, history
