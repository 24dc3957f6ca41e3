from .tensor import (
    Tensor, add, affine, as_tensor, batchnorm_train, broadcast_to, clamp, div, elementwise, exp, grad,
    is_grad_enabled, log, matmul, maximum, mean, mul, neg, no_grad, power,
    relu, reshape, row_norm, set_grad_enabled, sigmoid, sqrt, square, sub,
    sum_to, transpose, tsum,
)
from .functional import batchnorm
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Tensor", "add", "affine", "as_tensor", "batchnorm_train", "broadcast_to", "clamp", "div", "elementwise",
    "exp", "grad", "is_grad_enabled", "log", "matmul", "maximum", "mean", "mul",
    "neg", "no_grad", "power", "relu", "reshape", "row_norm", "set_grad_enabled",
    "sigmoid", "sqrt", "square", "sub", "sum_to", "transpose", "tsum",
    "batchnorm", "Adam", "AdamState", "adam_step",
]
