"""
Lifting-scheme wavelet machinery.

Covers the lazy even/odd split, the averaging Haar split and its inverse, the
adaptive lifting level (Haar split, averaged highs, learnable predictor/updater),
the directional lifting variant built from three one-dimensional lifting steps,
multi-level chaining and the wavelet regularization loss.

Haar normalization is /4 so the raw LL keeps the input mean.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from autograd import Conv2d, Module, Tensor, concat
from autograd import functional as F
from errors import ShapeError
from netpbm import write_netpbm

MIN_SIDE = 4
HUBER_DELTA = 1.0


@dataclass(frozen=True)
class SubbandQuad:
    """Four half-resolution components of one 2D split."""
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {self.ll.shape, self.lh.shape, self.hl.shape, self.hh.shape}
        if len(shapes) != 1:
            raise ShapeError(f"subband shapes differ: {sorted(shapes)}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.ll.shape


@dataclass(frozen=True)
class LiftOutput:
    """Approximation A and detail D of one lifting level, plus the per-channel means m^I, m^A."""
    approx: Tensor
    detail: Tensor
    input_mean: Tensor
    approx_mean: Tensor


@dataclass
class WaveletBranchOutput:
    details: List[Tensor] = field(default_factory=list)
    approximations: List[Tensor] = field(default_factory=list)
    level_means: List[Tuple[Tensor, Tensor]] = field(default_factory=list)

    @property
    def final_approx(self) -> Tensor:
        return self.approximations[-1]

    @property
    def levels(self) -> int:
        return len(self.details)


def max_levels(side: int) -> int:
    """Largest L with 4 * 2**L <= side, i.e. floor(log2(side) - log2(4))."""
    if side < MIN_SIDE:
        raise ShapeError(f"side {side} admits no wavelet decomposition (minimum {MIN_SIDE})")
    return (side // MIN_SIDE).bit_length() - 1


def lazy_split(x: Tensor, axis: int = -1) -> Tuple[Tensor, Tensor]:
    """x_e[n] = x[2n], x_o[n] = x[2n+1] along axis."""
    axis = axis % x.ndim
    if x.shape[axis] % 2:
        raise ShapeError(f"lazy_split needs an even length along axis {axis}, got {x.shape[axis]}")
    even = [slice(None)] * x.ndim
    odd = [slice(None)] * x.ndim
    even[axis] = slice(0, None, 2)
    odd[axis] = slice(1, None, 2)
    return x[tuple(even)], x[tuple(odd)]


def interleave(even: Union[Tensor, np.ndarray], odd: Union[Tensor, np.ndarray], axis: int = -1) -> np.ndarray:
    """Inverse of lazy_split."""
    even = even.data if isinstance(even, Tensor) else np.asarray(even)
    odd = odd.data if isinstance(odd, Tensor) else np.asarray(odd)
    axis = axis % even.ndim
    shape = list(even.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=even.dtype)
    index = [slice(None)] * even.ndim
    index[axis] = slice(0, None, 2)
    out[tuple(index)] = even
    index[axis] = slice(1, None, 2)
    out[tuple(index)] = odd
    return out


def _check_even(x: Tensor, op: str):
    if x.ndim != 4:
        raise ShapeError(f"{op} expects [N, C, H, W], got {x.shape}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"{op} needs even spatial dims, got {x.shape[2:]}")


def haar_split(x: Tensor) -> SubbandQuad:
    """
    Averaging Haar split of each 2x2 block [a b; c d]:
    LL=(a+b+c+d)/4, LH=(a+b-c-d)/4, HL=(a-b+c-d)/4, HH=(a-b-c+d)/4.
    """
    _check_even(x, "haar_split")
    data = x.data
    a = data[:, :, 0::2, 0::2]
    b = data[:, :, 0::2, 1::2]
    c = data[:, :, 1::2, 0::2]
    d = data[:, :, 1::2, 1::2]
    stacked = np.stack([
        (a + b + c + d) * 0.25,
        (a + b - c - d) * 0.25,
        (a - b + c - d) * 0.25,
        (a - b - c + d) * 0.25,
    ])
    shape = x.shape

    def _backward(g):
        g_ll, g_lh, g_hl, g_hh = g
        full = np.empty(shape, dtype=g.dtype)
        full[:, :, 0::2, 0::2] = (g_ll + g_lh + g_hl + g_hh) * 0.25
        full[:, :, 0::2, 1::2] = (g_ll + g_lh - g_hl - g_hh) * 0.25
        full[:, :, 1::2, 0::2] = (g_ll - g_lh + g_hl - g_hh) * 0.25
        full[:, :, 1::2, 1::2] = (g_ll - g_lh - g_hl + g_hh) * 0.25
        return (full,)

    bands = Tensor._make(stacked, (x,), _backward, "haar_split")
    return SubbandQuad(bands[0], bands[1], bands[2], bands[3])


def haar_inverse(q: SubbandQuad) -> Tensor:
    """Exact inverse of haar_split (not differentiable; a verification oracle)."""
    ll, lh, hl, hh = q.ll.data, q.lh.data, q.hl.data, q.hh.data
    n, c, h, w = ll.shape
    out = np.empty((n, c, 2 * h, 2 * w), dtype=ll.dtype)
    out[:, :, 0::2, 0::2] = ll + lh + hl + hh
    out[:, :, 0::2, 1::2] = ll + lh - hl - hh
    out[:, :, 1::2, 0::2] = ll - lh + hl - hh
    out[:, :, 1::2, 1::2] = ll - lh - hl + hh
    return Tensor(out, dtype=ll.dtype)


def high_avg(q: SubbandQuad) -> Tensor:
    """Average of the three detail subbands; the lifting input H."""
    return (q.lh + q.hl + q.hh) / 3.0


def haar_cascade(x: np.ndarray, levels: int) -> List[np.ndarray]:
    """Repeated fixed Haar LL of an NCHW array: [LL_1, ..., LL_levels]."""
    outputs = []
    current = np.asarray(x)
    for _ in range(levels):
        current = (
            current[:, :, 0::2, 0::2] + current[:, :, 0::2, 1::2]
            + current[:, :, 1::2, 0::2] + current[:, :, 1::2, 1::2]
        ) * 0.25
        outputs.append(current)
    return outputs


class LiftingNet(Module):
    """Predictor/updater: conv -> tanh -> conv -> tanh, channel preserving, reflect padded."""

    def __init__(self, channels: int, kernel: Tuple[int, int], rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, kernel, rng, padding="same", pad_mode=F.PaddingMode.REFLECT)
        # zero final layer: the level starts as an exact fixed wavelet
        self.conv2 = Conv2d(channels, channels, kernel, rng, padding="same", pad_mode=F.PaddingMode.REFLECT,
                            zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        return F.tanh(self.conv2(F.tanh(self.conv1(x))))


class AwtmLevel(Module):
    """Learnable predictor P and updater U of one adaptive lifting level."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.predictor = LiftingNet(channels, (3, 3), rng)
        self.updater = LiftingNet(channels, (3, 3), rng)


def awtm_forward(x: Tensor, params: AwtmLevel) -> LiftOutput:
    """Haar split, then D = H - P(LL) and A = LL + U(D)."""
    _check_even(x, "awtm_forward")
    q = haar_split(x)
    detail = high_avg(q) - params.predictor(q.ll)
    approx = q.ll + params.updater(detail)
    return LiftOutput(
        approx=approx,
        detail=detail,
        input_mean=x.mean(axis=(2, 3)),
        approx_mean=approx.mean(axis=(2, 3)),
    )


class DawnLevel(Module):
    """One horizontal and two independent vertical lifting steps."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        horizontal, vertical = (1, 3), (3, 1)
        self.h_predictor = LiftingNet(channels, horizontal, rng)
        self.h_updater = LiftingNet(channels, horizontal, rng)
        self.v1_predictor = LiftingNet(channels, vertical, rng)
        self.v1_updater = LiftingNet(channels, vertical, rng)
        self.v2_predictor = LiftingNet(channels, vertical, rng)
        self.v2_updater = LiftingNet(channels, vertical, rng)


def _lift(x: Tensor, axis: int, predictor: LiftingNet, updater: LiftingNet) -> Tuple[Tensor, Tensor]:
    even, odd = lazy_split(x, axis)
    detail = odd - predictor(even)
    return even + updater(detail), detail


def dawn_lifting_forward(x: Tensor, params: DawnLevel) -> SubbandQuad:
    """Directional lifting: split columns, then rows of both halves."""
    _check_even(x, "dawn_lifting_forward")
    approx_h, detail_h = _lift(x, 3, params.h_predictor, params.h_updater)
    ll, lh = _lift(approx_h, 2, params.v1_predictor, params.v1_updater)
    hl, hh = _lift(detail_h, 2, params.v2_predictor, params.v2_updater)
    return SubbandQuad(ll=ll, lh=lh, hl=hl, hh=hh)


def _check_levels(x: Tensor, levels: int, available: int):
    if levels < 1:
        raise ShapeError(f"decomposition needs at least one level, got {levels}")
    if available < levels:
        raise ShapeError(f"{levels} levels requested but only {available} lifting levels supplied")
    side = min(x.shape[2], x.shape[3])
    limit = max_levels(side)
    if levels > limit:
        raise ShapeError(f"{levels} levels exceed the maximum {limit} for spatial side {side}")


def wavelet_branch_forward(x: Tensor, levels: int, params: Sequence[AwtmLevel]) -> WaveletBranchOutput:
    """Chain adaptive lifting levels: level i consumes A_{i-1} (A_0 = x)."""
    _check_levels(x, levels, len(params))
    out = WaveletBranchOutput()
    current = x
    for level in params[:levels]:
        lifted = awtm_forward(current, level)
        out.details.append(lifted.detail)
        out.approximations.append(lifted.approx)
        out.level_means.append((lifted.input_mean, lifted.approx_mean))
        current = lifted.approx
    return out


def dawn_branch_forward(x: Tensor, levels: int, params: Sequence[DawnLevel]) -> WaveletBranchOutput:
    """Chain directional lifting levels; each level's details are the three detail maps stacked on channels."""
    _check_levels(x, levels, len(params))
    out = WaveletBranchOutput()
    current = x
    for level in params[:levels]:
        q = dawn_lifting_forward(current, level)
        out.details.append(concat([q.lh, q.hl, q.hh], axis=1))
        out.approximations.append(q.ll)
        out.level_means.append((current.mean(axis=(2, 3)), q.ll.mean(axis=(2, 3))))
        current = q.ll
    return out


class WaveletBranch(Module):
    """Stack of lifting levels owned by the model; parameters are named level<i>.*"""

    def __init__(self, channels: int, levels: int, rng: np.random.Generator, directional: bool = False):
        super().__init__()
        self.directional = directional
        self.num_levels = levels
        for i in range(1, levels + 1):
            setattr(self, f"level{i}", DawnLevel(channels, rng) if directional else AwtmLevel(channels, rng))

    @property
    def levels(self) -> List[Module]:
        return [getattr(self, f"level{i}") for i in range(1, self.num_levels + 1)]

    def __call__(self, x: Tensor) -> WaveletBranchOutput:
        if self.directional:
            return dawn_branch_forward(x, self.num_levels, self.levels)
        return wavelet_branch_forward(x, self.num_levels, self.levels)


def huber(t: Tensor, delta: float = HUBER_DELTA) -> Tensor:
    """Mean over elements of 0.5 v^2 (|v| <= delta) or delta (|v| - 0.5 delta)."""
    if delta <= 0:
        raise ShapeError(f"huber delta must be positive, got {delta}")
    v = t.data
    magnitude = np.abs(v)
    quadratic = magnitude <= delta
    value = np.where(quadratic, 0.5 * v * v, delta * (magnitude - 0.5 * delta)).mean()
    size = v.size

    def _backward(g):
        return (np.where(quadratic, v, delta * np.sign(v)) * (g / size),)

    return Tensor._make(np.asarray(value, dtype=v.dtype), (t,), _backward, "huber")


def loss_wt(branch: WaveletBranchOutput, alpha: float, beta: float, delta: float = HUBER_DELTA) -> Tensor:
    """
    alpha * sum_i huber(D_i) + beta * sum_i ||m^I_i - m^A_i||^2.

    The squared norm runs over channels and is averaged over the batch.
    """
    if branch.levels == 0:
        raise ShapeError("loss_wt needs a non-empty branch output")
    detail_term = huber(branch.details[0], delta)
    for detail in branch.details[1:]:
        detail_term = detail_term + huber(detail, delta)
    mean_term = None
    for input_mean, approx_mean in branch.level_means:
        gap = (input_mean - approx_mean).square().sum(axis=1).mean()
        mean_term = gap if mean_term is None else mean_term + gap
    return detail_term * alpha + mean_term * beta


def _to_gray_bytes(band: np.ndarray) -> np.ndarray:
    low, high = float(band.min()), float(band.max())
    if high - low <= 0:
        return np.full(band.shape, 128, dtype=np.uint8)
    return np.round((band - low) / (high - low) * 255.0).astype(np.uint8)


def dump_subbands(output: WaveletBranchOutput, stem: str, out_dir: Union[str, Path]) -> List[Path]:
    """Write every A_i / D_i channel of the first batch item as min-max normalized 8-bit PGM."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, (approx, detail) in enumerate(zip(output.approximations, output.details), start=1):
        for kind, band in (("A", approx), ("D", detail)):
            for channel in range(band.shape[1]):
                path = out_dir / f"{stem}_L{i}_{kind}_c{channel}.pgm"
                write_netpbm(path, _to_gray_bytes(band.data[0, channel]))
                written.append(path)
    return written
