"""One-step teacher-forced training with Adam and best-validation selection."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor
from .model import ModelConfig, ModelParameters, NormStats, init_params, predict_batch
from .physics import Trajectory

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 200
    batch_size: int = 50
    learning_rate: float = 1e-3
    seed: int = 0
    clip_norm: float = 10.0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


@dataclass
class TrainRecord:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def rows(self):
        for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
            yield i + 1, tr, va


def make_pairs(trajectories: list[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Consecutive ``(X_t, X_{t+1})`` pairs as two aligned (P, n, d) arrays."""
    if not trajectories:
        raise ValueError("make_pairs: no trajectories")
    inputs, targets = [], []
    for i, traj in enumerate(trajectories):
        if len(traj) < 2:
            raise ValueError(f"make_pairs: trajectory {i} has fewer than 2 stamps")
        inputs.append(traj.states[:-1])
        targets.append(traj.states[1:])
    return np.concatenate(inputs), np.concatenate(targets)


def step_loss(pred, truth, scale: np.ndarray | None = None, batch: int = 1) -> Tensor:
    """Squared Frobenius norm of ``pred - truth``, features divided by ``scale``, over ``batch``."""
    pred, truth = ad.as_tensor(pred), ad.as_tensor(truth)
    if pred.shape != truth.shape:
        raise ad.ShapeError(f"step_loss: shape mismatch {pred.shape} vs {truth.shape}")
    diff = pred - truth
    if scale is not None:
        diff = diff * np.broadcast_to(1.0 / np.asarray(scale), diff.shape).copy()
    return ad.sum_(diff * diff) * (1.0 / batch)


def batch_loss(params: ModelParameters, cfg: ModelConfig, X: np.ndarray, Y: np.ndarray) -> Tensor:
    """Mean per-pair one-step loss on increment-normalized features."""
    pred = predict_batch(X, params, cfg)
    return step_loss(pred, Y.reshape(pred.shape), params.norm.delta_std, batch=X.shape[0])


def evaluate_loss(params: ModelParameters, cfg: ModelConfig, X: np.ndarray, Y: np.ndarray, chunk: int = 50) -> float:
    total = 0.0
    for s in range(0, len(X), chunk):
        xb, yb = X[s : s + chunk], Y[s : s + chunk]
        total += float(batch_loss(params, cfg, xb, yb).data) * len(xb)
    return total / len(X)


def train_step(
    params: ModelParameters, cfg: TrainingConfig, state: AdamState, X: np.ndarray, Y: np.ndarray
) -> tuple[ModelParameters, float]:
    names = list(params.tensors)
    with Tape() as tape:
        loss = batch_loss(params, cfg.model, X, Y)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value}")
    g = ad.backward(tape, loss, [params.tensors[n] for n in names])
    grads = {n: g[params.tensors[n]] for n in names}
    grads, _ = ad.clip_by_global_norm(grads, cfg.clip_norm)
    new, _ = ad.adam_step(params.tensors, grads, state)
    return params.replace_tensors(new), value


def train(
    train_trajs: list[Trajectory],
    val_trajs: list[Trajectory],
    cfg: TrainingConfig,
    on_epoch: Callable[[int, float, float], None] | None = None,
    params: ModelParameters | None = None,
) -> tuple[ModelParameters, TrainRecord]:
    """Train on shuffled one-step pairs; return the parameters of the best validation epoch."""
    if not train_trajs or not val_trajs:
        raise ValueError("train: training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(cfg.model, NormStats.fit(train_trajs), rng)
    X, Y = make_pairs(train_trajs)
    Xv, Yv = make_pairs(val_trajs)
    state = AdamState(lr=cfg.learning_rate)
    record = TrainRecord()
    best, best_val = params, np.inf

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(X))
        losses = []
        for b, start in enumerate(range(0, len(X), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                params, value = train_step(params, cfg, state, X[idx], Y[idx])
            except (TrainingDiverged, ArithmeticError) as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}") from exc
            losses.append(value)
        train_loss = float(np.mean(losses))
        val_loss = evaluate_loss(params, cfg.model, Xv, Yv, cfg.batch_size)
        record.train_loss.append(train_loss)
        record.val_loss.append(val_loss)
        if val_loss < best_val:
            best, best_val, record.best_epoch = params, val_loss, epoch
        log.info("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
    return best, record
