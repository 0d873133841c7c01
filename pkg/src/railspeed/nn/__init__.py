"""From-scratch neural network core used by the speed regressors.

Everything is plain numpy in float64: convolution and pooling kernels
with explicit backward passes (functional), layer objects composing them
(layers), the squared-error loss (losses), SGD and Adam (optim), a
finite-difference gradient checker (gradcheck) and binary checkpoints
(checkpoint).
"""

from .checkpoint import CheckpointError, load_checkpoint, read_config, save_checkpoint
from .functional import (
    conv1d,
    conv1d_backward,
    conv2d,
    conv2d_backward,
    global_max_pool,
    global_max_pool_backward,
    max_pool1d,
    max_pool1d_backward,
    pool1d_output_length,
)
from .gradcheck import gradient_check
from .layers import (
    BatchNorm,
    Conv1D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GlobalMaxPool,
    Layer,
    MaxPool1D,
    MultiBranchNet,
    Param,
    ReLU,
    Sequential,
    dropout_layers,
)
from .losses import NumericsError, mse_loss
from .optim import SGD, Adam, TrainerConfig

__all__ = [
    "Adam",
    "BatchNorm",
    "CheckpointError",
    "read_config",
    "Conv1D",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "GlobalMaxPool",
    "Layer",
    "MaxPool1D",
    "MultiBranchNet",
    "NumericsError",
    "Param",
    "ReLU",
    "SGD",
    "Sequential",
    "TrainerConfig",
    "conv1d",
    "dropout_layers",
    "conv1d_backward",
    "conv2d",
    "conv2d_backward",
    "global_max_pool",
    "global_max_pool_backward",
    "gradient_check",
    "load_checkpoint",
    "max_pool1d",
    "max_pool1d_backward",
    "mse_loss",
    "pool1d_output_length",
    "save_checkpoint",
]
