"""
Central finite-difference gradient checking.

Run at float64. For every parameter a sample of entries is perturbed by +/-h and the
difference quotient is compared with the tape gradient. Entries where the quotients
at h and h/2 disagree sit on a kink (relu, maxpool switch) and are skipped.
"""

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from autograd.tensor import Parameter, Tensor, backward, no_grad

GradHook = Callable[[Dict[str, np.ndarray]], None]


class ParamCheck(BaseModel):
    """Outcome of checking one parameter tensor."""
    name: str
    max_rel_error: float = Field(description="Worst relative error over checked entries")
    checked: int = Field(description="Entries compared")
    skipped: int = Field(default=0, description="Entries skipped as non-smooth")


def relative_error(analytic: float, numeric: float, floor: float = 1e-7) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def numerical_grad(fn: Callable[[], Tensor], array: np.ndarray, index, h: float) -> float:
    """Central difference of a scalar fn() with respect to array[index], restoring the entry."""
    original = array[index]
    with no_grad():
        array[index] = original + h
        plus = fn().item()
        array[index] = original - h
        minus = fn().item()
    array[index] = original
    return (plus - minus) / (2.0 * h)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    grad_hook: Optional[GradHook] = None,
    kink_tol: float = 1e-4,
) -> List[ParamCheck]:
    """
    Compare tape gradients of loss_fn() against central differences.

    Args:
        loss_fn: builds the scalar loss from the current parameter values
        params: parameters to check (also the ones whose grads get zeroed)
        h: finite-difference step
        max_entries: sample at most this many entries per parameter (None = all)
        rng: sampling generator
        grad_hook: receives {name: analytic grad} before comparison (test hook)
        kink_tol: relative disagreement between the h and h/2 quotients that marks a kink

    Returns:
        One ParamCheck per parameter, in order
    """
    rng = rng or np.random.default_rng(0)
    for param in params:
        param.grad[...] = 0
    backward(loss_fn())
    analytic = {p.name: p.grad.copy() for p in params}
    if grad_hook is not None:
        grad_hook(analytic)

    results = []
    for param in params:
        flat_size = param.size
        if max_entries is None or flat_size <= max_entries:
            picks = np.arange(flat_size)
        else:
            picks = np.sort(rng.choice(flat_size, size=max_entries, replace=False))
        worst, skipped = 0.0, 0
        for flat_index in picks:
            index = np.unravel_index(flat_index, param.shape)
            numeric = numerical_grad(loss_fn, param.data, index, h)
            if kink_tol is not None:
                half = numerical_grad(loss_fn, param.data, index, h / 2)
                if relative_error(numeric, half) > kink_tol:
                    skipped += 1
                    continue
            worst = max(worst, relative_error(float(analytic[param.name][index]), numeric))
        results.append(ParamCheck(name=param.name, max_rel_error=worst, checked=len(picks) - skipped, skipped=skipped))
    return results
