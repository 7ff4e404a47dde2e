"""
Module containers: parameter/buffer registries and the three stateful layers.

A Module discovers its parameters, buffers and sub-modules from its attributes
(lists of modules included), so names follow the attribute path, e.g.
"backbone.stage2.0.conv1.weight".
"""

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from autograd import functional as F
from autograd.tensor import Parameter, Tensor, get_default_dtype


class Module:
    """Base class for anything that owns parameters or running state."""

    _buffer_names: Tuple[str, ...] = ()

    def __init__(self):
        self.training = True

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for attr, value in vars(self).items():
            if isinstance(value, Module):
                yield attr, value
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{attr}.{index}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + attr, value
        for attr, child in self.children():
            yield from child.named_parameters(f"{prefix}{attr}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for attr in self._buffer_names:
            yield prefix + attr, getattr(self, attr)
        for attr, child in self.children():
            yield from child.named_buffers(f"{prefix}{attr}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self):
        """Stamp each parameter with its attribute path; call once on the root module."""
        for name, param in self.named_parameters():
            param.name = name

    def state_buffers(self) -> Dict[str, np.ndarray]:
        return dict(self.named_buffers())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def cast(self, dtype) -> "Module":
        """Move every parameter and buffer to the given precision in place."""
        for param in self.parameters():
            param.cast(dtype)
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        for attr in self._buffer_names:
            setattr(self, attr, getattr(self, attr).astype(dtype))
        for _, child in self.children():
            child._cast_buffers(dtype)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: Tuple[int, int],
        rng: np.random.Generator,
        stride: int = 1,
        padding: F.Padding = "same",
        pad_mode: F.PaddingMode = F.PaddingMode.ZERO,
        bias: bool = True,
        zero_init: bool = False,
    ):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        shape = (out_channels, in_channels, kh, kw)
        data = np.zeros(shape) if zero_init else kaiming_uniform(rng, shape, in_channels * kh * kw)
        self.weight = Parameter(data, "weight")
        self.bias: Optional[Parameter] = Parameter(np.zeros(out_channels), "bias") if bias else None
        self.stride = stride
        self.padding = padding
        self.pad_mode = pad_mode

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.pad_mode)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dtype = get_default_dtype()
        self.gamma = Parameter(np.ones(channels), "gamma")
        self.beta = Parameter(np.zeros(channels), "beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(out_features, in_features)), "weight")
        self.bias = Parameter(np.zeros(out_features), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)
