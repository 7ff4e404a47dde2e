"""
End-to-end gradient check of a small random model at 64-bit precision.
"""

from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ValidationError

from autograd import Tensor, default_dtype
from autograd.gradcheck import ParamCheck, check_gradients
from config import BackboneConfig, BackbonePreset, ModelConfig, TapPosition, Variant, format_validation_error
from errors import ConfigError, GradCheckError
from model import build_model, total_loss

THRESHOLD = 1e-3


class GroupCheck(BaseModel):
    group: str
    max_rel_error: float
    checked: int
    skipped: int


def group_of(name: str) -> str:
    """backbone.stage2.0.conv1.weight -> backbone.stage2; head.weight -> head."""
    parts = name.split(".")
    return ".".join(parts[:2]) if parts[0] in ("backbone", "branch") and len(parts) > 2 else parts[0]


def group_results(checks: List[ParamCheck]) -> List[GroupCheck]:
    groups: Dict[str, GroupCheck] = {}
    for check in checks:
        key = group_of(check.name)
        current = groups.get(key)
        if current is None:
            groups[key] = GroupCheck(
                group=key, max_rel_error=check.max_rel_error, checked=check.checked, skipped=check.skipped,
            )
        else:
            current.max_rel_error = max(current.max_rel_error, check.max_rel_error)
            current.checked += check.checked
            current.skipped += check.skipped
    return list(groups.values())


def gradcheck_config(variant: Variant, tap: TapPosition, levels: Optional[int]) -> ModelConfig:
    try:
        return ModelConfig(
            backbone=BackboneConfig.from_preset(BackbonePreset.GRADCHECK),
            tap=tap, levels=levels, variant=variant, num_classes=2, alpha=0.1, beta=0.1,
        )
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from e


def run_gradcheck(
    variant: Variant = Variant.AWTM,
    tap: TapPosition = TapPosition.POS2,
    levels: Optional[int] = None,
    seed: int = 0,
    max_entries: int = 6,
    threshold: float = THRESHOLD,
    corrupt_backward: bool = False,
) -> List[GroupCheck]:
    """
    Compare tape gradients of the total loss with central differences for every parameter group.

    Zero-initialized lifting layers are replaced by small random values first so
    every predictor/updater path carries gradient.

    Raises:
        GradCheckError: listing the worst offending groups, if any exceeds threshold
    """
    config = gradcheck_config(variant, tap, levels)
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        model = build_model(config, seed)
        for name, param in model.named_parameters():
            if name.startswith("branch.") and not np.any(param.data):
                param.data[...] = rng.normal(0.0, 0.1, size=param.shape)
        side = config.backbone.input_side
        images = Tensor(rng.random((2, config.backbone.input_channels, side, side)))
        labels = np.array([0, 1])

        def loss_fn():
            logits, branch = model(images)
            return total_loss(logits, labels, branch, config.alpha, config.beta)

        def corrupt(grads):
            for name, grad in grads.items():
                if name.startswith("head."):
                    grad *= 1.5

        checks = check_gradients(
            loss_fn, model.parameters(), max_entries=max_entries, rng=rng,
            grad_hook=corrupt if corrupt_backward else None,
        )

    groups = group_results(checks)
    offenders = sorted(
        ((g.group, g.max_rel_error) for g in groups if g.max_rel_error >= threshold),
        key=lambda item: item[1], reverse=True,
    )
    if offenders:
        listing = ", ".join(f"{name} ({error:.3e})" for name, error in offenders[:5])
        raise GradCheckError(f"gradient check failed for {len(offenders)} group(s): {listing}", offenders=offenders)
    return groups
