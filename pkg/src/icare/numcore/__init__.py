"""Deterministic numpy tensor library with reverse-mode autodiff."""
from icare.numcore import functional
from icare.numcore.functional import (
    batch_norm,
    conv2d,
    dense,
    dropout,
    mse_loss,
    relu,
    sigmoid,
    smooth_l1_loss,
    weighted_bce_loss,
)
from icare.numcore.gradcheck import GradCheckReport, check_module, grad_check
from icare.numcore.nn import (
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    LossConfig,
    Module,
    ReLU,
    Sequential,
    Sigmoid,
)
from icare.numcore.optim import Adam, AdamConfig
from icare.numcore.tensor import Tensor, concat, default_dtype, get_default_dtype, no_grad, set_default_dtype

__all__ = [
    "Adam", "AdamConfig", "BatchNorm", "Conv2d", "Dense", "Dropout", "Flatten", "GradCheckReport",
    "LossConfig", "Module", "ReLU", "Sequential", "Sigmoid", "Tensor", "batch_norm", "check_module",
    "concat", "conv2d", "default_dtype", "dense", "dropout", "functional", "get_default_dtype",
    "grad_check", "mse_loss", "no_grad", "relu", "set_default_dtype", "sigmoid", "smooth_l1_loss",
    "weighted_bce_loss",
]
