"""Minimal dense fp64 tensor engine with reverse-mode autodiff."""

from .gradcheck import grad_check
from .layers import (
    Conv1d,
    ConvTranspose1d,
    Dense,
    Embedding,
    LSTM,
    Module,
    lstm_cell,
    uniform_fan_in,
)
from .optim import AdamW, CosineSchedule, cosine_lr
from .tensor import (
    ShapeError,
    Tensor,
    add,
    bce_with_logits_mean,
    conv1d,
    conv1d_forward,
    conv_transpose1d,
    conv_transpose1d_forward,
    cross_entropy_mean,
    embedding,
    leaky_relu,
    matmul,
    mean,
    mul,
    permute,
    reshape,
    scale,
    set_debug,
    sigmoid,
    slice_cols,
    softmax,
    stack0,
    straight_through,
    sub,
    sum_squares,
    tanh,
    tsum,
)

__all__ = [
    "AdamW", "Conv1d", "ConvTranspose1d", "CosineSchedule", "Dense", "Embedding",
    "LSTM", "Module", "ShapeError", "Tensor", "add", "bce_with_logits_mean",
    "conv1d", "conv1d_forward", "conv_transpose1d", "conv_transpose1d_forward",
    "cosine_lr", "cross_entropy_mean", "embedding", "grad_check", "leaky_relu",
    "lstm_cell", "matmul", "mean", "mul", "permute", "reshape", "scale",
    "set_debug", "sigmoid", "slice_cols", "softmax", "stack0", "straight_through", "sub",
    "sum_squares", "tanh", "tsum", "uniform_fan_in",
]
