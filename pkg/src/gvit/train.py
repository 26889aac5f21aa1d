"""RMSE-loss training with per-epoch validation-based model selection.

Graphs have different lengths, so there is no tensor batching; instead the
per-step loss pools the predictions of `accumulation` graphs into one s x 2
matrix and takes a single RMSE, which matches batch-averaged gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DimensionError, DomainError, TrainingDiverged
from .optim import Adam
from .tensor import Tensor, backward, concat_rows, from_op, no_grad


@dataclass
class TrainConfig:
    epochs: int = 60
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    accumulation: int = 8  # graphs pooled per gradient step
    clip_norm: float = 1.0  # 0 disables clipping
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise DomainError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise DomainError(f"learning rate must be positive, got {self.lr}")
        if self.accumulation < 1:
            raise DomainError(f"accumulation must be >= 1, got {self.accumulation}")
        return self


@dataclass
class TrainHistory:
    """Per-epoch losses; the selected epoch minimizes validation loss."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)

    @property
    def selected_epoch(self) -> int:
        return select_epoch(self.val_loss)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selected_epoch"] = self.selected_epoch
        return d


def select_epoch(val_losses) -> int:
    """Index of the minimum validation loss; ties go to the earliest epoch."""
    if not len(val_losses):
        raise DomainError("empty validation history")
    return int(np.argmin(val_losses))


def fold_seed(base_seed: int, fold: int) -> int:
    """Per-fold seed derived deterministically from the base seed."""
    return int(np.random.SeedSequence([base_seed, 100 + fold]).generate_state(1)[0])


def rmse_loss(pred: Tensor, target) -> Tensor:
    """Root mean square error over all s x 2 entries, as a scalar tensor.

    loss = sqrt( (1/(2s)) * sum_i sum_g (pred - target)^2 ); at an exact
    zero the subgradient 0 is used.
    """
    target = target.data if isinstance(target, Tensor) else np.asarray(target, float)
    if pred.data.shape != target.shape:
        raise DimensionError(
            f"rmse_loss: pred shape {pred.shape} != target shape {target.shape}"
        )
    if pred.size == 0:
        raise DomainError("rmse_loss on empty prediction")
    diff = pred.data - target
    denom = diff.size
    value = np.sqrt(np.sum(diff * diff) / denom)

    def bwd(out):
        if value > 0:
            pred.grad += out.grad * diff / (denom * value)

    return from_op(value, (pred,), bwd)


def _dataset_rmse(model, graphs) -> float:
    """Validation RMSE over raw (unclamped) forward outputs."""
    with no_grad():
        preds = np.vstack([model.forward(g).data for g in graphs])
    targets = np.vstack([g.targets for g in graphs])
    diff = preds - targets
    return float(np.sqrt(np.sum(diff * diff) / diff.size))


def train_fold(model, train_graphs, val_graphs, cfg: TrainConfig) -> TrainHistory:
    """Train one fold; leaves the model at its best-validation snapshot."""
    cfg.validate()
    if not train_graphs or not val_graphs:
        raise DomainError("train and validation sets must both be non-empty")
    overlap = {id(g) for g in train_graphs} & {id(g) for g in val_graphs}
    if overlap:
        raise DomainError("train and validation sets overlap")
    opt = Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
               eps=cfg.eps, clip_norm=cfg.clip_norm)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    history = TrainHistory()
    best_val = np.inf
    best_state = model.snapshot()
    for _epoch in range(cfg.epochs):
        tic = time.perf_counter()
        order = rng.permutation(len(train_graphs))
        step_losses, step_sizes = [], []
        for lo in range(0, len(order), cfg.accumulation):
            chunk = [train_graphs[i] for i in order[lo:lo + cfg.accumulation]]
            try:
                preds = concat_rows([model.forward(g) for g in chunk])
                targets = np.vstack([g.targets for g in chunk])
                loss = rmse_loss(preds, targets)
                backward(loss)
            except FloatingPointError as exc:
                names = [g.meta.get("source", "?") for g in chunk]
                raise TrainingDiverged(
                    f"non-finite loss on graphs {names}: {exc}"
                ) from exc
            opt.step()
            step_losses.append(loss.item())
            step_sizes.append(len(chunk))
        epoch_loss = float(np.average(step_losses, weights=step_sizes))
        val = _dataset_rmse(model, val_graphs)
        history.train_loss.append(epoch_loss)
        history.val_loss.append(val)
        history.epoch_seconds.append(time.perf_counter() - tic)
        if val < best_val:
            best_val = val
            best_state = model.snapshot()
    model.load_state(best_state)
    return history


def train_cv(graphs, folds, model_factory, cfg: TrainConfig):
    """Train one model per fold; fold f validates on fold f's graphs.

    ``model_factory(seed)`` must return a fresh model. Returns
    (models, histories, aggregate) where the aggregate reports the mean
    and spread of the folds' best validation RMSE.
    """
    if not folds:
        raise DomainError("no folds to train on")
    models, histories = [], []
    trainval = sorted(i for fold in folds for i in fold)
    for f, fold in enumerate(folds):
        fold_set = set(fold)
        train_graphs = [graphs[i] for i in trainval if i not in fold_set]
        val_graphs = [graphs[i] for i in fold]
        seed_f = fold_seed(cfg.seed, f)
        model = model_factory(seed_f)
        fold_cfg = TrainConfig(**{**asdict(cfg), "seed": seed_f})
        histories.append(train_fold(model, train_graphs, val_graphs, fold_cfg))
        models.append(model)
    best = [h.val_loss[h.selected_epoch] for h in histories]
    aggregate = {
        "fold_val_rmse": best,
        "mean_val_rmse": float(np.mean(best)),
        "std_val_rmse": float(np.std(best)),
        "selected_epochs": [h.selected_epoch for h in histories],
    }
    return models, histories, aggregate
