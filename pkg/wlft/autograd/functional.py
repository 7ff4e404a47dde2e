"""
Differentiable operators used by the backbone, the wavelet branch and the loss.

Each operator validates its contract, computes the forward value with numpy and
records a closure for the backward pass on the tape.
"""

from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from autograd.tensor import Tensor
from errors import ShapeError

Padding = Union[int, Tuple[int, int], str]


class PaddingMode(str, Enum):
    ZERO = "zero"
    REFLECT = "reflect"


def _pair(value) -> Tuple[int, int]:
    if isinstance(value, int):
        return value, value
    first, second = value
    return int(first), int(second)


def _pad(x: np.ndarray, ph: int, pw: int, mode: PaddingMode) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    widths = ((0, 0), (0, 0), (ph, ph), (pw, pw))
    if mode == PaddingMode.REFLECT:
        if x.shape[2] <= ph or x.shape[3] <= pw:
            raise ShapeError(f"reflect padding {ph, pw} needs spatial dims larger than the pad, got {x.shape[2:]}")
        return np.pad(x, widths, mode="reflect")
    return np.pad(x, widths, mode="constant")


def _fold_reflect(g: np.ndarray, pad: int, axis: int) -> np.ndarray:
    """Adjoint of numpy's 'reflect' padding along one axis."""
    if pad == 0:
        return g
    size = g.shape[axis] - 2 * pad
    core = np.take(g, np.arange(pad, pad + size), axis=axis)
    index = [slice(None)] * g.ndim
    for k in range(pad):
        # padded[pad-1-k] mirrors x[k+1]; padded[pad+size+k] mirrors x[size-2-k]
        index[axis] = k + 1
        core[tuple(index)] += np.take(g, pad - 1 - k, axis=axis)
        index[axis] = size - 2 - k
        core[tuple(index)] += np.take(g, pad + size + k, axis=axis)
    return core


def _unpad(g: np.ndarray, ph: int, pw: int, mode: PaddingMode) -> np.ndarray:
    if mode == PaddingMode.REFLECT:
        return _fold_reflect(_fold_reflect(g, ph, 2), pw, 3)
    h, w = g.shape[2] - 2 * ph, g.shape[3] - 2 * pw
    return g[:, :, ph:ph + h, pw:pw + w]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Padding = 0,
    pad_mode: PaddingMode = PaddingMode.ZERO,
) -> Tensor:
    """
    2D cross-correlation over an NCHW batch.

    Args:
        x: input [N, C, H, W]
        weight: filters [F, C, kH, kW], odd kernel sizes only
        bias: optional [F]
        stride: step between output positions (>= 1)
        padding: pad per side, a (pad_h, pad_w) pair, or "same" for (k-1)/2
        pad_mode: zero or reflect padding

    Returns:
        Tensor [N, F, H', W'] with H' = (H + 2*pad - kH) // stride + 1
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    f, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {wc}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d needs odd kernel sizes, got {kh}x{kw}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d bias must have shape ({f},), got {bias.shape}")

    mode = PaddingMode(pad_mode)
    ph, pw = ((kh - 1) // 2, (kw - 1) // 2) if padding == "same" else _pair(padding)
    xp = _pad(x.data, ph, pw, mode)
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {xp.shape[2:]}")

    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    wdata = weight.data
    padded_shape = xp.shape

    def _backward(g):
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, wdata, axes=([1], [0]))  # n, ho, wo, c, kh, kw
        grad_xp = np.zeros(padded_shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                grad_xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                    cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_x = _unpad(grad_xp, ph, pw, mode)
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, _backward, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """out[n, k] = sum_d x[n, d] * weight[k, d] + bias[k]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear dimension mismatch: input {x.shape}, weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear bias must have shape ({weight.shape[0]},), got {bias.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def _backward(g):
        grads = (g @ wd, g.T @ xd)
        return grads if bias is None else grads + (g.sum(axis=0),)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, _backward, "linear")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    Per-channel batch normalization over (N, H, W).

    In training mode the batch statistics normalize the input and the running
    statistics are updated in place (unbiased variance, like the usual ResNet
    convention). In eval mode the running statistics are used.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects a 4D input, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d scale/shift must have shape ({c},)")
    count = n * h * w
    shape = (1, c, 1, 1)

    if training:
        if count < 2:
            raise ShapeError("batchnorm2d in train mode needs at least two values per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mean, var = running_mean, running_var

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)
    gdata = gamma.data

    def _backward(g):
        grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
        grad_beta = g.sum(axis=(0, 2, 3))
        gxhat = g * gdata.reshape(shape)
        if training:
            grad_x = (inv_std.reshape(shape) / count) * (
                count * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            grad_x = gxhat * inv_std.reshape(shape)
        return grad_x, grad_gamma, grad_beta

    return Tensor._make(out.astype(x.dtype), (x, gamma, beta), _backward, "batchnorm2d")


def maxpool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """Max pooling; ties resolve to the first maximum in row-major window order."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects a 4D input, got {x.shape}")
    n, c, h, w = x.shape
    if h == 0 or w == 0:
        raise ShapeError("maxpool2d on empty spatial dims")
    if h + 2 * padding < kernel or w + 2 * padding < kernel:
        raise ShapeError(f"maxpool2d kernel {kernel} larger than padded input {(h, w)}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    ho = (xp.shape[2] - kernel) // stride + 1
    wo = (xp.shape[3] - kernel) // stride + 1
    windows = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = windows.reshape(n, c, ho, wo, kernel * kernel)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    padded_shape = xp.shape

    def _backward(g):
        grad_xp = np.zeros(padded_shape, dtype=g.dtype)
        for k in range(kernel * kernel):
            i, j = divmod(k, kernel)
            grad_xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += g * (argmax == k)
        return (grad_xp[:, :, padding:padding + h, padding:padding + w],)

    return Tensor._make(np.ascontiguousarray(out), (x,), _backward, "maxpool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C] spatial mean."""
    if x.ndim != 4 or x.shape[2] * x.shape[3] == 0:
        raise ShapeError(f"global_avg_pool expects a non-empty 4D input, got {x.shape}")
    n, c, h, w = x.shape
    area = h * w

    def _backward(g):
        return (np.broadcast_to(g[:, :, None, None] / area, (n, c, h, w)).copy(),)

    return Tensor._make(x.data.mean(axis=(2, 3)), (x,), _backward, "global_avg_pool")


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    """Row softmax without gradient tracking."""
    return Tensor(np.exp(log_softmax_rows(logits.data)), dtype=logits.dtype)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], in log-sum-exp form."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects [N, C] logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ShapeError(f"labels must lie in [0, {classes})")

    logp = log_softmax_rows(logits.data)
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def _backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / n),)

    return Tensor._make(loss, (logits,), _backward, "softmax_cross_entropy")
