"""Composite differentiable functions built from the primitive ops."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, ShapeError
from .tensor import Tensor, add, as_tensor, batchnorm_train, mul, sub


def batchnorm(x, gamma, beta, eps: float = 1e-5, training: bool = True,
              running_mean: np.ndarray | None = None,
              running_var: np.ndarray | None = None,
              momentum: float = 0.1) -> Tensor:
    """Per-column batch standardisation followed by an affine map.

    In training mode the batch statistics are used and, if running buffers
    are passed, they are updated in place with ``momentum``. In inference
    mode the running buffers are used. ``eps`` acts as a floor on the
    variance, so a constant column maps to exactly zero.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"batchnorm expects a 2-D batch, got shape {x.shape}")
    if training:
        if x.shape[0] < 2:
            raise ContractError("batchnorm in training mode needs a batch of at least 2 rows")
        out, mu, var = batchnorm_train(x, gamma, beta, eps)
        if running_mean is not None:
            n = x.shape[0]
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * n / (n - 1)
        return out
    if running_mean is None or running_var is None:
        raise ContractError("inference-mode batchnorm needs running statistics")
    scale = 1.0 / np.sqrt(np.maximum(running_var, eps))
    xhat = mul(sub(x, running_mean), scale)
    return add(mul(xhat, gamma), beta)
