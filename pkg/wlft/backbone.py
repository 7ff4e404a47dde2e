"""
Residual CNN backbone with five tap points.

pos1 is the stem output (conv-bn-relu, before the stem maxpool), pos2..pos5 are the
outputs of stages 1..4. The backbone returns the pooled feature F_CNN together
with the activation at the requested tap.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from autograd import BatchNorm2d, Conv2d, Module, Tensor
from autograd import functional as F
from config import BackboneConfig, TapPosition, tap_level_limit
from errors import ShapeError


@dataclass(frozen=True)
class TapPoint:
    id: TapPosition
    feature_side: int
    feature_channels: int


class BasicBlock(Module):
    """conv3x3-bn-relu-conv3x3-bn plus identity or 1x1 projection shortcut, relu after the add."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, padding=1, bias=False)
        self.bn2 = BatchNorm2d(out_channels)
        self.shortcut: Optional[Conv2d] = None
        self.shortcut_bn: Optional[BatchNorm2d] = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Conv2d(in_channels, out_channels, 1, rng, stride=stride, padding=0, bias=False)
            self.shortcut_bn = BatchNorm2d(out_channels)

    def __call__(self, x: Tensor) -> Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        identity = x if self.shortcut is None else self.shortcut_bn(self.shortcut(x))
        return F.relu(out + identity)


class Backbone(Module):
    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.stem = Conv2d(
            config.input_channels, config.stem_width, config.stem_kernel, rng,
            stride=config.stem_stride, padding=config.stem_kernel // 2, bias=False,
        )
        self.stem_bn = BatchNorm2d(config.stem_width)
        in_channels = config.stem_width
        for index, (width, blocks) in enumerate(zip(config.stage_widths, config.blocks_per_stage), start=1):
            stride = 1 if index == 1 else 2
            stage = []
            for b in range(blocks):
                stage.append(BasicBlock(in_channels, width, stride if b == 0 else 1, rng))
                in_channels = width
            setattr(self, f"stage{index}", stage)

    def stages(self) -> List[List[BasicBlock]]:
        return [getattr(self, f"stage{i}") for i in range(1, 5)]

    def __call__(self, x: Tensor, tap: Optional[TapPosition] = None) -> Tuple[Tensor, Optional[Tensor]]:
        """
        Run stem, stages and global average pooling.

        Args:
            x: batch [N, input_channels, input_side, input_side]
            tap: tap position whose activation is returned (None for no tap)

        Returns:
            (F_CNN [N, stage_widths[-1]], tap activation or None)

        Raises:
            ShapeError: if x does not match the configured input shape
        """
        cfg = self.config
        expected = (cfg.input_channels, cfg.input_side, cfg.input_side)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"backbone expects [N, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}")
        tap = TapPosition(tap) if tap is not None else None

        taps = {}
        out = F.relu(self.stem_bn(self.stem(x)))
        taps[TapPosition.POS1] = out
        if cfg.stem_maxpool:
            out = F.maxpool2d(out, kernel=3, stride=2, padding=1)
        for position, stage in zip(list(TapPosition)[1:], self.stages()):
            for block in stage:
                out = block(out)
            taps[position] = out
        return F.global_avg_pool(out), taps.get(tap) if tap is not None else None


def tap_points(config: BackboneConfig) -> List[TapPoint]:
    """Tap table computed from the geometry alone."""
    return [TapPoint(tap, config.tap_side(tap), config.tap_channels(tap)) for tap in TapPosition]


def tap_max_levels(config: BackboneConfig, tap: TapPosition) -> int:
    """Deepest decomposition the tap supports; 0 when its side is below the minimum."""
    return tap_level_limit(config, TapPosition(tap))
