"""SGD with momentum over Parameter sets."""

from typing import Iterable

from autograd.tensor import Parameter
from errors import ConfigError


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float = 0.0):
    """buf <- momentum * buf + grad; p <- p - lr * buf. Gradients are left for the caller to zero."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for param in params:
        buf = param.momentum_buffer
        buf *= momentum
        buf += param.grad
        param.data -= lr * buf


def zero_grad(params: Iterable[Parameter]):
    for param in params:
        param.grad[...] = 0
