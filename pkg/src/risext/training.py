"""Training loop (MSE objective, Adam, stepped learning-rate decay) and NMSE
evaluation in the unnormalized channel domain.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, mix64, planes_to_channel
from .engine import adam_step, mse_loss, zero_grads
from .network import Model

NMSE_FLOOR_DB = -120.0


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 32
    epochs: int = 120
    lr0: float = 0.0005
    warm_epochs: int = 40      # epochs at the initial rate before decay starts
    decay: float = 0.8
    decay_period: int = 10
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not (self.lr0 > 0 and 0 < self.decay <= 1 and self.decay_period >= 1):
            raise ValueError("invalid learning-rate schedule")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size, "epochs": self.epochs,
            "lr0": self.lr0, "warm_epochs": self.warm_epochs,
            "decay": self.decay, "decay_period": self.decay_period,
            "seed": self.seed, "shuffle": self.shuffle,
        }


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    test_nmse_db: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def write_csv(self, path) -> None:
        """Wall time is deliberately excluded so reruns are byte-identical."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "test_loss", "nmse_db", "lr"])
            for e in range(len(self)):
                w.writerow([e, repr(self.train_loss[e]), repr(self.test_loss[e]),
                            repr(self.test_nmse_db[e]), repr(self.lr[e])])


def lr_at(epoch: int, config: TrainingConfig) -> float:
    """Initial rate through the warm epochs, then multiplied by the decay
    factor once per period starting at the first post-warm epoch.
    """
    if epoch < config.warm_epochs:
        return config.lr0
    steps = (epoch - config.warm_epochs) // config.decay_period + 1
    return config.lr0 * config.decay ** steps


def _stack(pairs):
    z_in = np.stack([p.z_in for p in pairs])
    z_ta = np.stack([p.z_ta for p in pairs])
    return z_in, z_ta


def _batched_forward(model: Model, z_in: np.ndarray, batch_size: int) -> np.ndarray:
    outs = []
    for i in range(0, z_in.shape[0], batch_size):
        outs.append(model.forward(z_in[i:i + batch_size]))
    return np.concatenate(outs, axis=0)


def evaluate_nmse(model: Model, pairs, scale: float, batch_size: int = 32,
                  detail: bool = False):
    """Mean per-sample ||C - C_hat||_F^2 / ||C||_F^2 in dB, undoing the
    dataset normalization. With detail=True also returns the ratio-of-sums
    variant and the raw mean ratio.
    """
    z_in, z_ta = _stack(pairs)
    z_out = _batched_forward(model, z_in, batch_size)
    c_true = planes_to_channel(z_ta) / scale
    c_hat = planes_to_channel(z_out) / scale
    err = np.sum(np.abs(c_true - c_hat) ** 2, axis=(1, 2))
    ref = np.sum(np.abs(c_true) ** 2, axis=(1, 2))
    mean_ratio = float(np.mean(err / ref))
    db = NMSE_FLOOR_DB if mean_ratio <= 10 ** (NMSE_FLOOR_DB / 10) \
        else float(10.0 * np.log10(mean_ratio))
    if not detail:
        return db
    pooled = float(np.sum(err) / np.sum(ref))
    pooled_db = NMSE_FLOOR_DB if pooled <= 10 ** (NMSE_FLOOR_DB / 10) \
        else float(10.0 * np.log10(pooled))
    return {"nmse_db": db, "mean_ratio": mean_ratio,
            "pooled_ratio": pooled, "pooled_db": pooled_db}


def _test_metrics(model: Model, z_in, z_ta, cfg_sys, scale: float,
                  batch_size: int):
    """One forward pass over the test set: (loss, NMSE dB)."""
    z_out = _batched_forward(model, z_in, batch_size)
    loss, _ = mse_loss(z_out, z_ta, cfg_sys.m, cfg_sys.l, cfg_sys.k,
                       z_in.shape[0])
    err = np.sum((z_ta - z_out) ** 2, axis=(1, 2, 3))
    ref = np.sum(z_ta ** 2, axis=(1, 2, 3))
    mean_ratio = float(np.mean(err / ref))
    db = NMSE_FLOOR_DB if mean_ratio <= 10 ** (NMSE_FLOOR_DB / 10) \
        else float(10.0 * np.log10(mean_ratio))
    return loss, db


def train(model: Model, dataset: Dataset, config: TrainingConfig) -> TrainHistory:
    """Minibatch Adam training; per-epoch test loss and NMSE are recorded."""
    sys_cfg = dataset.manifest.config
    scale = dataset.manifest.scale
    z_in, z_ta = _stack(dataset.train)
    z_in_test, z_ta_test = _stack(dataset.test)
    n = z_in.shape[0]
    params = model.params()
    history = TrainHistory()
    start = time.perf_counter()
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        if config.shuffle:
            order = np.random.default_rng(
                mix64(config.seed, epoch)).permutation(n)
        else:
            order = np.arange(n)
        epoch_loss = 0.0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            out = model.forward(z_in[idx])
            loss, grad = mse_loss(out, z_ta[idx], sys_cfg.m, sys_cfg.l,
                                  sys_cfg.k, len(idx))
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}, batch {i}")
            zero_grads(params)
            model.backward(grad)
            adam_step(params, lr)
            epoch_loss += loss * len(idx)
        history.train_loss.append(epoch_loss / n)
        test_loss, test_nmse = _test_metrics(model, z_in_test, z_ta_test,
                                             sys_cfg, scale, config.batch_size)
        history.test_loss.append(test_loss)
        history.test_nmse_db.append(test_nmse)
        history.lr.append(lr)
        history.wall_time.append(time.perf_counter() - start)
    return history
