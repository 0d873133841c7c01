"""The three CNN regressors and their shared training loop.

All three take a window of shape (n, 3) with columns (time, wheel, gps)
and regress one normalized speed:

* single2d treats the window as an (n, 3, 1) image: blocks of
  conv2d -> batch norm -> ReLU, then dropout, flatten, dense(1).
* single1d treats it as a 3-channel sequence: blocks of
  conv1d -> ReLU -> max pool (5, 5), then dense 128 -> 32 -> 1 with
  dropout after the first dense.
* multibranch runs one conv branch per column (two conv layers per
  block, the second with twice the filters, then a global max pool),
  concatenates the branch features and finishes with dense
  64 -> 32 -> 1, dropout after each hidden dense.

Configurations are validated against the searched hyperparameter ranges
so every buildable config is also a legal search point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .dataset import DatasetSplit, NormalizationConfig, as_arrays, window_inputs
from .report import SpeedEstimateTrace
from .rng import stream
from .signals import TrainRun

ARCH_NAMES = ("single2d", "single1d", "multibranch")

WINDOW_LENGTHS = (10, 20, 30, 40)
KERNELS_2D = ((3, 2), (5, 2), (7, 2))
BATCH_SIZES = (8, 16, 32, 64)
POOL = 5
POOL_STRIDE = 5


class ConfigError(ValueError):
    """Configuration outside the searched hyperparameter space."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, detail: str):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass(frozen=True)
class ArchConfig:
    arch: str
    input_shape: tuple[int, ...]
    n_blocks: int
    n_filters: int
    kernel_size: tuple[int, int] | int
    dropout_rate: float
    learning_rate: float
    batch_size: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if isinstance(self.kernel_size, (list, tuple)):
            object.__setattr__(self, "kernel_size", tuple(self.kernel_size))
        if self.arch not in ARCH_NAMES:
            raise ConfigError(f"arch must be one of {ARCH_NAMES}, got {self.arch!r}")
        shapes = {
            "single2d": tuple((n, 3, 1) for n in WINDOW_LENGTHS),
            "single1d": tuple((n, 3) for n in WINDOW_LENGTHS),
            "multibranch": tuple((n, 1) for n in WINDOW_LENGTHS),
        }[self.arch]
        if self.input_shape not in shapes:
            raise ConfigError(f"input shape {self.input_shape} not in {shapes}")
        max_blocks = 3 if self.arch == "multibranch" else 20
        if not 1 <= self.n_blocks <= max_blocks:
            raise ConfigError(f"blocks must be in [1, {max_blocks}], got {self.n_blocks}")
        if not 8 <= self.n_filters <= 64:
            raise ConfigError(f"filters must be in [8, 64], got {self.n_filters}")
        if self.arch == "single2d":
            if self.kernel_size not in KERNELS_2D:
                raise ConfigError(f"kernel must be one of {KERNELS_2D}, got {self.kernel_size}")
        else:
            if not (isinstance(self.kernel_size, int) and 2 <= self.kernel_size <= 10):
                raise ConfigError(f"kernel must be an int in [2, 10], got {self.kernel_size}")
        if not 0.0 <= self.dropout_rate <= 0.5:
            raise ConfigError(f"dropout must be in [0, 0.5], got {self.dropout_rate}")
        if not 1e-5 <= self.learning_rate <= 1e-2:
            raise ConfigError(f"learning rate must be in [1e-5, 1e-2], got {self.learning_rate}")
        if self.batch_size not in BATCH_SIZES:
            raise ConfigError(f"batch size must be one of {BATCH_SIZES}, got {self.batch_size}")

    @property
    def window(self) -> int:
        return self.input_shape[0]

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "input_shape": list(self.input_shape),
            "n_blocks": self.n_blocks,
            "n_filters": self.n_filters,
            "kernel_size": (
                list(self.kernel_size) if isinstance(self.kernel_size, tuple) else self.kernel_size
            ),
            "dropout_rate": self.dropout_rate,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ArchConfig":
        try:
            kernel = data["kernel_size"]
            if isinstance(kernel, list):
                kernel = tuple(kernel)
            return cls(
                arch=data["arch"],
                input_shape=tuple(data["input_shape"]),
                n_blocks=data["n_blocks"],
                n_filters=data["n_filters"],
                kernel_size=kernel,
                dropout_rate=data["dropout_rate"],
                learning_rate=data["learning_rate"],
                batch_size=data["batch_size"],
            )
        except KeyError as err:
            raise ConfigError(f"config is missing field {err}") from None


OPTIMAL_CONFIGS = {
    "single2d": ArchConfig(
        arch="single2d",
        input_shape=(20, 3, 1),
        n_blocks=3,
        n_filters=40,
        kernel_size=(7, 2),
        dropout_rate=4.9e-5,
        learning_rate=1.7e-4,
        batch_size=8,
    ),
    "single1d": ArchConfig(
        arch="single1d",
        input_shape=(10, 3),
        n_blocks=4,
        n_filters=53,
        kernel_size=2,
        dropout_rate=8.8e-3,
        learning_rate=2.0e-3,
        batch_size=8,
    ),
    "multibranch": ArchConfig(
        arch="multibranch",
        input_shape=(30, 1),
        n_blocks=2,
        n_filters=46,
        kernel_size=2,
        dropout_rate=1.9e-4,
        learning_rate=1.8e-3,
        batch_size=32,
    ),
}


class Reshape(nn.Layer):
    """Reshapes the per-sample tail of the batch, e.g. (n, 3) -> (n, 3, 1)."""

    def __init__(self, tail: tuple[int, ...]):
        self.tail = tuple(tail)
        self._shape: tuple[int, ...] | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.tail)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._shape)


def build_single2d(config: ArchConfig, seed: int = 0) -> nn.Sequential:
    if config.arch != "single2d":
        raise ConfigError(f"expected a single2d config, got {config.arch!r}")
    init = stream(seed, "init")
    drop = stream(seed, "dropout")
    n = config.window
    layers: list[nn.Layer] = [Reshape((n, 3, 1))]
    c_in = 1
    for _ in range(config.n_blocks):
        # batch norm absorbs any per-channel shift, so the conv runs bias-free
        layers.append(nn.Conv2D(c_in, config.n_filters, config.kernel_size, init, bias=False))
        layers.append(nn.BatchNorm(config.n_filters))
        layers.append(nn.ReLU())
        c_in = config.n_filters
    layers.append(nn.Dropout(config.dropout_rate, drop))
    layers.append(nn.Flatten())
    layers.append(nn.Dense(n * 3 * config.n_filters, 1, init))
    return nn.Sequential(layers)


def single1d_lengths(n: int, n_blocks: int) -> list[int]:
    """Sequence length after each block (same-padded conv, clamped pool)."""
    lengths = []
    length = n
    for _ in range(n_blocks):
        length = nn.pool1d_output_length(length, POOL, POOL_STRIDE)
        lengths.append(length)
    return lengths

def build_single1d(config: ArchConfig, seed: int = 0) -> nn.Sequential:
    if config.arch != "single1d":
        raise ConfigError(f"expected a single1d config, got {config.arch!r}")
    init = stream(seed, "init")
    drop = stream(seed, "dropout")
    layers: list[nn.Layer] = []
    c_in = 3
    length = config.window
    for _ in range(config.n_blocks):
        layers.append(nn.Conv1D(c_in, config.n_filters, config.kernel_size, init))
        layers.append(nn.ReLU())
        layers.append(nn.MaxPool1D(POOL, POOL_STRIDE))
        length = nn.pool1d_output_length(length, POOL, POOL_STRIDE)
        c_in = config.n_filters
    layers.append(nn.Flatten())
    layers.append(nn.Dense(length * config.n_filters, 128, init))
    layers.append(nn.ReLU())
    layers.append(nn.Dropout(config.dropout_rate, drop))
    layers.append(nn.Dense(128, 32, init))
    layers.append(nn.ReLU())
    layers.append(nn.Dense(32, 1, init))
    return nn.Sequential(layers)


def build_multibranch(config: ArchConfig, seed: int = 0) -> nn.MultiBranchNet:
    if config.arch != "multibranch":
        raise ConfigError(f"expected a multibranch config, got {config.arch!r}")
    init = stream(seed, "init")
    drop = stream(seed, "dropout")
    f = config.n_filters
    branches = []
    for _ in range(3):  # time, wheel speed, GPS speed
        layers: list[nn.Layer] = []
        c_in = 1
        for _ in range(config.n_blocks):
            layers.append(nn.Conv1D(c_in, f, config.kernel_size, init))
            layers.append(nn.ReLU())
            layers.append(nn.Conv1D(f, 2 * f, config.kernel_size, init))
            layers.append(nn.ReLU())
            c_in = 2 * f
        layers.append(nn.GlobalMaxPool())
        branches.append(nn.Sequential(layers))
    head = nn.Sequential(
        [
            nn.Dense(3 * 2 * f, 64, init),
            nn.ReLU(),
            nn.Dropout(config.dropout_rate, drop),
            nn.Dense(64, 32, init),
            nn.ReLU(),
            nn.Dropout(config.dropout_rate, drop),
            nn.Dense(32, 1, init),
        ]
    )
    return nn.MultiBranchNet(branches, head)


BUILDERS = {
    "single2d": build_single2d,
    "single1d": build_single1d,
    "multibranch": build_multibranch,
}


def build(config: ArchConfig, seed: int = 0) -> nn.Layer:
    return BUILDERS[config.arch](config, seed)


def trainer_from_arch(
    config: ArchConfig, epochs: int, seed: int = 0, optimizer: str = "sgd"
) -> nn.TrainerConfig:
    """Training knobs implied by an architecture config."""
    return nn.TrainerConfig(
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        epochs=epochs,
        optimizer=optimizer,
        seed=seed,
    )


@dataclass
class TrainedModel:
    net: nn.Layer
    config: ArchConfig | None
    trainer: nn.TrainerConfig
    history: list[tuple[float, float]]  # (train_loss, val_loss) per epoch
    pruned: bool = False

    @property
    def epochs_trained(self) -> int:
        return len(self.history)


def _forward_loss(net: nn.Layer, x: np.ndarray, y: np.ndarray, train: bool) -> tuple[float, np.ndarray]:
    pred = net.forward(x, train)
    return nn.mse_loss(pred, y.reshape(pred.shape))


def _eval_loss(net: nn.Layer, x: np.ndarray, y: np.ndarray, batch: int = 512) -> float:
    total = 0.0
    # overflow here is fine: the caller treats a non-finite result as divergence
    with np.errstate(over="ignore"):
        for lo in range(0, x.shape[0], batch):
            hi = min(lo + batch, x.shape[0])
            pred = net.forward(x[lo:hi], train=False).reshape(-1)
            total += float(np.sum((pred - y[lo:hi]) ** 2))
    return total / x.shape[0]


def train(
    net: nn.Layer,
    split: DatasetSplit,
    trainer: nn.TrainerConfig,
    reporter: Callable[[int, float], bool] | None = None,
    config: ArchConfig | None = None,
) -> TrainedModel:
    """Mini-batch gradient descent; returns the model with its history.

    The reporter is called after each epoch with (epoch, val_loss); a
    truthy return stops training early and marks the model pruned.
    """
    if not split.train or not split.val:
        raise ValueError("both split halves must be non-empty")
    x_train, y_train = as_arrays(split.train)
    x_val, y_val = as_arrays(split.val)

    params = net.params()
    if trainer.optimizer == "adam":
        opt = nn.Adam(params, trainer.learning_rate)
    else:
        opt = nn.SGD(params, trainer.learning_rate)
    shuffle = stream(trainer.seed, "shuffle")
    if not trainer.dropout_active:
        for layer in nn.dropout_layers(net):
            layer.p = 0.0

    model = TrainedModel(net=net, config=config, trainer=trainer, history=[])
    for epoch in range(trainer.epochs):
        order = shuffle.permutation(x_train.shape[0])
        batch_losses = []
        for lo in range(0, len(order), trainer.batch_size):
            idx = order[lo : lo + trainer.batch_size]
            if len(idx) < 2:
                continue  # batch statistics need at least two samples
            try:
                loss, dpred = _forward_loss(net, x_train[idx], y_train[idx], train=True)
                net.backward(dpred)
                opt.step()
            except nn.NumericsError as err:
                raise TrainingDivergedError(epoch, str(err)) from err
            batch_losses.append(loss)
        val_loss = _eval_loss(net, x_val, y_val)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(epoch, f"validation loss is {val_loss}")
        model.history.append((float(np.mean(batch_losses)), val_loss))
        if reporter is not None and reporter(epoch, val_loss):
            model.pruned = True
            break
    return model


def predict_run(model: TrainedModel, run: TrainRun, n: int, norm: NormalizationConfig) -> SpeedEstimateTrace:
    """Sliding-window inference; estimates start n steps into the run."""
    inputs, times = window_inputs(run, n, norm)
    estimator = model.config.arch if model.config is not None else "cnn"
    estimates = np.empty(inputs.shape[0])
    for lo in range(0, inputs.shape[0], 512):
        hi = min(lo + 512, inputs.shape[0])
        estimates[lo:hi] = model.net.forward(inputs[lo:hi], train=False).reshape(-1)
    estimates = np.maximum(estimates * norm.peak_speed, 0.0)
    entries = tuple((float(t), float(v)) for t, v in zip(times, estimates))
    return SpeedEstimateTrace(run_id=run.run_id, entries=entries, estimator=estimator)


def save_history(history: list[tuple[float, float]], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, (train_loss, val_loss) in enumerate(history):
            writer.writerow([epoch, repr(train_loss), repr(val_loss)])


def save_model(model: TrainedModel, path: str | Path, norm: NormalizationConfig) -> None:
    config = {
        "arch_config": model.config.to_dict() if model.config else None,
        "trainer": {
            "learning_rate": model.trainer.learning_rate,
            "batch_size": model.trainer.batch_size,
            "epochs": model.trainer.epochs,
            "optimizer": model.trainer.optimizer,
            "dropout_active": model.trainer.dropout_active,
            "seed": model.trainer.seed,
        },
        "peak_speed": norm.peak_speed,
        "history": model.history,
        "pruned": model.pruned,
    }
    nn.save_checkpoint(model.net, path, config)


def load_model(path: str | Path) -> tuple[TrainedModel, NormalizationConfig]:
    meta = nn.read_config(path)
    if not meta.get("arch_config"):
        raise nn.CheckpointError("checkpoint lacks an architecture config")
    config = ArchConfig.from_dict(meta["arch_config"])
    net = build(config, seed=0)
    nn.load_checkpoint(net, path)
    trainer = nn.TrainerConfig(**meta["trainer"])
    model = TrainedModel(
        net=net,
        config=config,
        trainer=trainer,
        history=[tuple(h) for h in meta.get("history", [])],
        pruned=meta.get("pruned", False),
    )
    return model, NormalizationConfig(peak_speed=meta["peak_speed"])
