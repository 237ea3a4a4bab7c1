"""Minimal differentiable-layer library: hand-derived backward passes only."""

from .gradcheck import GradCheckError, grad_check
from .layers import BatchNorm2d, Conv2d, Dense, Dropout, GlobalAvgPool2d, PReLU
from .losses import mse_loss, softmax_cross_entropy
from .lstm import (
    LstmCellParams,
    bilstm_forward,
    bilstm_multi_backward,
    bilstm_multi_forward,
    lstm_cell_step,
    lstm_seq_backward,
    lstm_seq_forward,
)
from .optim import adam_step, zero_grads
from .params import Param, count_params

__all__ = [
    "Param",
    "count_params",
    "Dense",
    "Conv2d",
    "BatchNorm2d",
    "PReLU",
    "Dropout",
    "GlobalAvgPool2d",
    "LstmCellParams",
    "lstm_cell_step",
    "lstm_seq_forward",
    "lstm_seq_backward",
    "bilstm_forward",
    "bilstm_multi_forward",
    "bilstm_multi_backward",
    "softmax_cross_entropy",
    "mse_loss",
    "adam_step",
    "zero_grads",
    "grad_check",
    "GradCheckError",
]
