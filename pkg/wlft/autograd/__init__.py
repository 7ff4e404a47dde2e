# Tensor engine package
from autograd.tensor import (
    Parameter,
    Tensor,
    backward,
    concat,
    default_dtype,
    get_default_dtype,
    no_grad,
)
from autograd.module import BatchNorm2d, Conv2d, Linear, Module
from autograd.optim import sgd_step, zero_grad

__all__ = [
    "Tensor",
    "Parameter",
    "backward",
    "concat",
    "default_dtype",
    "get_default_dtype",
    "no_grad",
    "Module",
    "Conv2d",
    "BatchNorm2d",
    "Linear",
    "sgd_step",
    "zero_grad",
]
