"""
ResNet_WT: residual backbone, a parallel lifting-wavelet branch at one tap, and a
single fully connected classifier over concat(F_CNN, F_WT).
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from autograd import Linear, Module, Tensor, concat, get_default_dtype
from autograd import functional as F
from backbone import Backbone
from config import ModelConfig, Variant
from errors import ShapeError
from wavelets import WaveletBranch, WaveletBranchOutput, loss_wt


class ResNetWT(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.backbone = Backbone(config.backbone, rng)
        self.branch: Optional[WaveletBranch] = None
        if config.has_branch:
            self.branch = WaveletBranch(
                config.tap_channels, config.levels, rng, directional=config.variant == Variant.DAWN,
            )
        self.head = Linear(config.feature_length, config.num_classes, rng)

    def features(self, x: Tensor) -> Tuple[Tensor, Optional[WaveletBranchOutput]]:
        """Classifier input and the branch output it was pooled from."""
        tap = self.config.tap if self.branch is not None else None
        f_cnn, tap_feature = self.backbone(x, tap)
        if self.branch is None:
            return f_cnn, None
        branch = self.branch(tap_feature)
        pooled = [F.global_avg_pool(d) for d in branch.details]
        pooled.append(F.global_avg_pool(branch.final_approx))
        return concat([f_cnn] + pooled, axis=1), branch

    def __call__(self, x: Tensor) -> Tuple[Tensor, Optional[WaveletBranchOutput]]:
        features, branch = self.features(x)
        return self.head(features), branch


def build_model(config: ModelConfig, seed: int) -> ResNetWT:
    """Seeded model at the current default precision, with parameter names assigned."""
    model = ResNetWT(config, np.random.default_rng(seed))
    model.assign_names()
    dtype = get_default_dtype()
    if any(p.dtype != dtype for p in model.parameters()):
        model.cast(dtype)
    return model


def model_forward(x: Tensor, model: ResNetWT) -> Tuple[Tensor, Optional[WaveletBranchOutput]]:
    return model(x)


def loss_terms(
    logits: Tensor,
    labels: Sequence[int],
    branch: Optional[WaveletBranchOutput],
    alpha: float,
    beta: float,
) -> Tuple[Tensor, Optional[Tensor]]:
    """Cross-entropy and the wavelet loss (None without a branch)."""
    ce = F.softmax_cross_entropy(logits, labels)
    if branch is None:
        return ce, None
    if alpha < 0 or beta < 0:
        raise ShapeError(f"loss weights must be non-negative, got alpha={alpha}, beta={beta}")
    return ce, loss_wt(branch, alpha, beta)


def total_loss(
    logits: Tensor,
    labels: Sequence[int],
    branch: Optional[WaveletBranchOutput],
    alpha: float,
    beta: float,
) -> Tensor:
    """Cross-entropy plus the wavelet loss; backbone-only models carry only the first term."""
    ce, wt = loss_terms(logits, labels, branch, alpha, beta)
    return ce if wt is None else ce + wt


def predict_proba(logits: Tensor) -> Tensor:
    return F.softmax(logits)
