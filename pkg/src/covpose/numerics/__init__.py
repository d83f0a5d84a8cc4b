from .gradcheck import gradcheck, max_relative_error, numerical_grad
from .optim import AdamWState, LrSchedule, adamw_step, lr_at
from .tensor import (
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    conv_transpose2d,
    gather_rows,
    gelu,
    getitem,
    layer_norm,
    linear,
    matmul,
    mean,
    mse_loss,
    mul,
    relu,
    reshape,
    scatter_rows,
    self_attention,
    softmax,
    sub,
    transpose,
    tsum,
)

__all__ = [
    "AdamWState", "GraphError", "LrSchedule", "NonFiniteError", "ShapeError", "Tensor",
    "adamw_step", "add", "as_tensor", "backward", "conv_transpose2d", "gather_rows", "gelu",
    "getitem", "gradcheck", "layer_norm", "linear", "lr_at", "matmul", "max_relative_error",
    "mean", "mse_loss", "mul", "numerical_grad", "relu", "reshape", "scatter_rows", "self_attention", "softmax",
    "sub", "transpose", "tsum",
]
