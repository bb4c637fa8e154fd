"""Mini-batch Adam training with best-validation checkpointing, plus model persistence."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ..autodiff import Adam, Tensor, load_checkpoint, mse_loss, no_grad, save_checkpoint
from .models import NeuralConfig, _Forecaster, build_model


class TrainingDivergedError(FloatingPointError):
    pass


class BatchSource(Protocol):
    def __len__(self) -> int: ...

    def batch(self, idx=None) -> dict[str, np.ndarray]: ...


class ArraySource:
    """In-memory batch source over equally long arrays keyed by model input name."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        lengths = {len(v) for v in arrays.values()}
        if len(lengths) != 1:
            raise ValueError(f"arrays differ in length: {sorted(lengths)}")
        self.arrays = arrays

    def __len__(self) -> int:
        return len(next(iter(self.arrays.values())))

    def batch(self, idx=None) -> dict[str, np.ndarray]:
        return dict(self.arrays) if idx is None else {k: v[idx] for k, v in self.arrays.items()}


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0
    learning_rate: float = 1e-3
    eval_batch_size: int = 64
    stop_below_ratio: float | None = None  # end once an epoch's training MSE is below this fraction of the first loss

    def __post_init__(self):
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [0, max_epochs]")


@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    initial_train_mse: float = math.nan  # loss of the very first mini-batch before any update
    best_epoch: int = 0  # 1-based; 0 when no validation set was given

    @property
    def best_val_mse(self) -> float:
        return min(self.val_mse) if self.val_mse else math.nan

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_mse", "val_mse"])
            for e, tr, va in zip(self.epochs, self.train_mse, self.val_mse):
                w.writerow([e, repr(tr), repr(va)])

    @classmethod
    def read_csv(cls, path) -> "History":
        h = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                h.epochs.append(int(row["epoch"]))
                h.train_mse.append(float(row["train_mse"]))
                h.val_mse.append(float(row["val_mse"]))
        return h


def _inputs(batch: dict, dtype) -> tuple[dict, np.ndarray]:
    return batch, np.asarray(batch["y"], dtype=dtype)


def predict(model: _Forecaster, data: BatchSource, batch_size: int = 64) -> np.ndarray:
    """``[N, horizon]`` predictions in infer mode, computed in fixed-size chunks."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = [model(data.batch(np.arange(s, min(s + batch_size, len(data))))).data
                   for s in range(0, len(data), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, model.config.horizon))


def evaluate_mse(model: _Forecaster, data: BatchSource, batch_size: int = 64) -> float:
    pred = predict(model, data, batch_size)
    y = np.concatenate([data.batch(np.arange(s, min(s + batch_size, len(data))))["y"]
                        for s in range(0, len(data), batch_size)])
    return float(np.mean((pred - y) ** 2))


def train(model: _Forecaster, train_set: BatchSource, val_set: BatchSource | None,
          config: TrainingConfig = TrainingConfig(), history_path=None) -> tuple[_Forecaster, History]:
    """Fit ``model`` in place; returns it with the weights of its best validation epoch.

    Batch order and dropout masks derive from ``config.seed`` alone. Without
    a validation set the model trains for exactly ``max_epochs`` epochs and
    keeps its final weights (the merge-and-retrain path); ``val_mse`` is then
    recorded as NaN.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if val_set is not None and len(val_set) == 0:
        raise ValueError("validation set is empty")
    params = model.parameters()
    opt = Adam(params, config.learning_rate)
    history = History()
    best_state, best_val, wait = None, math.inf, 0
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        model.train()
        model.set_dropout_rng(np.random.default_rng([config.seed, epoch, 1]))
        order = rng.permutation(n)
        total = 0.0
        for b, s in enumerate(range(0, n, config.batch_size)):
            idx = np.sort(order[s:s + config.batch_size])
            batch, y = _inputs(train_set.batch(idx), model.dtype)
            opt.zero_grad()
            try:
                loss = mse_loss(model(batch), Tensor(y))
            except FloatingPointError as exc:
                raise TrainingDivergedError(f"non-finite values in epoch {epoch}, batch {b}: {exc}") from exc
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(f"loss is {value} in epoch {epoch}, batch {b}")
            if epoch == 1 and b == 0:
                history.initial_train_mse = value
            loss.backward()
            opt.step()
            total += value * len(idx)
        model.set_dropout_rng(None)
        history.epochs.append(epoch)
        history.train_mse.append(total / n)
        reached = config.stop_below_ratio is not None and total / n < config.stop_below_ratio * history.initial_train_mse
        if val_set is None:
            history.val_mse.append(math.nan)
            if reached:
                break
            continue
        val = evaluate_mse(model, val_set, config.eval_batch_size)
        if not math.isfinite(val):
            raise TrainingDivergedError(f"validation loss is {val} after epoch {epoch}")
        history.val_mse.append(val)
        if val < best_val:
            best_val, best_state, wait = val, model.state_dict(), 0
            history.best_epoch = epoch
        else:
            wait += 1
            if wait > config.patience:
                break
        if reached:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    model.trained = True
    if history_path is not None:
        history.write_csv(history_path)
    return model, history


def save_model(path, model: _Forecaster, meta: dict | None = None) -> None:
    doc = {"kind": model.kind, "seed": model.seed, "config": model.config.to_dict(), "trained": model.trained,
           **(meta or {})}
    save_checkpoint(path, model.state_dict(), doc)


def load_model(path) -> tuple[_Forecaster, dict]:
    tensors, meta = load_checkpoint(path)
    model = build_model(meta["kind"], NeuralConfig.from_dict(meta["config"]), meta["seed"])
    model.load_state_dict(tensors)
    model.trained = bool(meta.get("trained", False))
    model.eval()
    return model, meta

