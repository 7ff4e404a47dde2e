"""
Configuration schemas for wlft runs.

These Pydantic models define every knob of a run: backbone geometry, model
composition, the training protocol and the preprocessing/augmentation pipeline.
RunConfig reads and writes the flat key=value run file.
"""

from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from errors import ConfigError
from wavelets import max_levels


class Variant(str, Enum):
    AWTM = "awtm"
    DAWN = "dawn"
    BACKBONE_ONLY = "backbone_only"


class TapPosition(str, Enum):
    POS1 = "pos1"
    POS2 = "pos2"
    POS3 = "pos3"
    POS4 = "pos4"
    POS5 = "pos5"

    @property
    def index(self) -> int:
        return int(self.value[-1])


class Precision(str, Enum):
    FLOAT32 = "float32"
    FLOAT64 = "float64"


class BackbonePreset(str, Enum):
    FULL = "full"
    TINY = "tiny"
    GRADCHECK = "gradcheck"


_PRESETS = {
    BackbonePreset.FULL: dict(
        stem_width=64, stem_kernel=7, stem_stride=2, stem_maxpool=True,
        stage_widths=[64, 128, 256, 512], blocks_per_stage=[2, 2, 2, 2], input_side=256,
    ),
    BackbonePreset.TINY: dict(
        stem_width=16, stem_kernel=3, stem_stride=1, stem_maxpool=False,
        stage_widths=[16, 32, 64, 128], blocks_per_stage=[1, 1, 1, 1], input_side=32,
    ),
    BackbonePreset.GRADCHECK: dict(
        stem_width=4, stem_kernel=3, stem_stride=1, stem_maxpool=False,
        stage_widths=[4, 4, 8, 8], blocks_per_stage=[1, 1, 1, 1], input_side=16,
    ),
}

_SIDE_MULTIPLE = {BackbonePreset.FULL: 32, BackbonePreset.TINY: 8, BackbonePreset.GRADCHECK: 8}


def _conv_out(side: int, kernel: int, stride: int) -> int:
    return (side + 2 * (kernel // 2) - kernel) // stride + 1


class BackboneConfig(BaseModel):
    """ResNet-shaped backbone geometry."""
    preset: BackbonePreset = Field(default=BackbonePreset.TINY, description="Geometry preset")
    stem_width: int = Field(gt=0, description="Stem conv output channels (w0)")
    stem_kernel: int = Field(gt=0, description="Stem conv kernel size")
    stem_stride: int = Field(gt=0, description="Stem conv stride")
    stem_maxpool: bool = Field(description="3x3/2 max pool after the stem")
    stage_widths: List[int] = Field(description="Output channels of stages 1-4")
    blocks_per_stage: List[int] = Field(description="Basic blocks per stage")
    input_channels: int = Field(default=1, description="1 (grayscale) or 3 (color)")
    input_side: int = Field(description="Square input side in pixels")

    @classmethod
    def from_preset(
        cls,
        preset: BackbonePreset = BackbonePreset.TINY,
        input_channels: int = 1,
        input_side: Optional[int] = None,
    ) -> "BackboneConfig":
        preset = BackbonePreset(preset)
        values = dict(_PRESETS[preset])
        if input_side is not None:
            values["input_side"] = input_side
        return cls(preset=preset, input_channels=input_channels, **values)

    @field_validator("stage_widths", "blocks_per_stage")
    @classmethod
    def four_positive(cls, v):
        if len(v) != 4 or any(x <= 0 for x in v):
            raise ValueError("expected four positive values")
        return v

    @field_validator("input_channels")
    @classmethod
    def gray_or_color(cls, v):
        if v not in (1, 3):
            raise ValueError("input_channels must be 1 or 3")
        return v

    @model_validator(mode="after")
    def side_multiple(self):
        multiple = _SIDE_MULTIPLE[self.preset]
        if self.input_side <= 0 or self.input_side % multiple:
            raise ValueError(f"input_side must be a positive multiple of {multiple} for the {self.preset.value} preset")
        return self

    @property
    def output_channels(self) -> int:
        return self.stage_widths[-1]

    def tap_side(self, tap: TapPosition) -> int:
        """Spatial side of the activation at a tap point."""
        side = _conv_out(self.input_side, self.stem_kernel, self.stem_stride)
        if tap == TapPosition.POS1:
            return side
        if self.stem_maxpool:
            side = _conv_out(side, 3, 2)
        for _ in range(TapPosition(tap).index - 2):
            side = _conv_out(side, 3, 2)
        return side

    def tap_channels(self, tap: TapPosition) -> int:
        tap = TapPosition(tap)
        return self.stem_width if tap == TapPosition.POS1 else self.stage_widths[tap.index - 2]


def tap_level_limit(backbone: BackboneConfig, tap: TapPosition) -> int:
    side = backbone.tap_side(tap)
    return max_levels(side) if side >= 4 else 0


class ModelConfig(BaseModel):
    """Backbone plus optional wavelet branch at one tap."""
    backbone: BackboneConfig = Field(default_factory=BackboneConfig.from_preset)
    tap: TapPosition = Field(default=TapPosition.POS4, description="Insertion position of the wavelet branch")
    levels: Optional[int] = Field(default=None, description="Decomposition levels; None resolves to the tap maximum")
    variant: Variant = Field(default=Variant.AWTM)
    num_classes: int = Field(default=2, ge=2)
    alpha: float = Field(default=0.1, ge=0, description="Weight of the detail Huber term")
    beta: float = Field(default=0.1, ge=0, description="Weight of the mean-preservation term")

    @model_validator(mode="after")
    def resolve_levels(self):
        if self.variant == Variant.BACKBONE_ONLY:
            return self
        limit = tap_level_limit(self.backbone, self.tap)
        if limit < 1:
            raise ValueError(
                f"{self.tap.value} (side {self.backbone.tap_side(self.tap)}) supports no wavelet decomposition level"
            )
        if self.levels is None:
            self.levels = limit
        elif not 1 <= self.levels <= limit:
            raise ValueError(
                f"levels={self.levels} outside 1..{limit} for {self.tap.value} "
                f"(side {self.backbone.tap_side(self.tap)})"
            )
        return self

    @property
    def has_branch(self) -> bool:
        return self.variant != Variant.BACKBONE_ONLY

    @property
    def tap_channels(self) -> int:
        return self.backbone.tap_channels(self.tap)

    @property
    def feature_length(self) -> int:
        """Classifier input length: F_CNN plus pooled branch subbands."""
        length = self.backbone.output_channels
        if self.variant == Variant.AWTM:
            length += (self.levels + 1) * self.tap_channels
        elif self.variant == Variant.DAWN:
            length += (3 * self.levels + 1) * self.tap_channels
        return length


class TrainConfig(BaseModel):
    """Training protocol."""
    epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=8, ge=1)
    lr0: float = Field(default=1e-3, gt=0, description="Initial learning rate")
    momentum: float = Field(default=0.9, ge=0, lt=1)
    lr_half_period: int = Field(default=10, ge=1, description="Epochs between learning-rate halvings")
    alpha: float = Field(default=0.1, ge=0)
    beta: float = Field(default=0.1, ge=0)
    seed: int = Field(default=0, ge=0)
    precision: Precision = Field(default=Precision.FLOAT32)
    checkpoint_dir: str = Field(default="checkpoints")
    log_path: str = Field(default="train_log.csv")
    checkpoint_every: int = Field(default=10, ge=1, description="Write a checkpoint every N epochs")
    positive_class: int = Field(default=1, ge=0, description="Class treated as positive for recall/ROC")


class AugmentConfig(BaseModel):
    """Preprocessing and training-time augmentation."""
    equalize: bool = Field(default=True, description="Histogram-equalize every loaded image")
    augment: bool = Field(default=True, description="Augment training samples")
    flip_p: float = Field(default=0.5, ge=0, le=1)
    rotate_p: float = Field(default=0.5, ge=0, le=1)
    rotate_deg: float = Field(default=15.0, ge=0)
    affine_p: float = Field(default=0.5, ge=0, le=1)
    translate_frac: float = Field(default=0.1, ge=0, lt=1)
    scale_min: float = Field(default=0.9, gt=0)
    scale_max: float = Field(default=1.1, gt=0)
    brightness_p: float = Field(default=0.5, ge=0, le=1)
    brightness_min: float = Field(default=0.8, gt=0)
    brightness_max: float = Field(default=1.2, gt=0)

    @model_validator(mode="after")
    def ordered_ranges(self):
        if self.scale_min > self.scale_max:
            raise ValueError("scale_min must not exceed scale_max")
        if self.brightness_min > self.brightness_max:
            raise ValueError("brightness_min must not exceed brightness_max")
        return self

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(flip_p=0, rotate_p=0, affine_p=0, brightness_p=0)


_MODEL_KEYS = ("preset", "input_channels", "input_side", "tap", "levels", "variant", "num_classes", "alpha", "beta")
_TRAIN_KEYS = tuple(k for k in TrainConfig.model_fields if k not in ("alpha", "beta"))
_AUGMENT_KEYS = tuple(AugmentConfig.model_fields)
KNOWN_KEYS = frozenset(_MODEL_KEYS + _TRAIN_KEYS + _AUGMENT_KEYS)


def format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse key=value lines; '#' starts a comment, blank lines are ignored."""
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{number}: unknown key {key!r}")
        values[key] = value
    return values


class RunConfig(BaseModel):
    """Fully resolved configuration of one run."""
    model: ModelConfig
    train: TrainConfig
    augment: AugmentConfig

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "RunConfig":
        unknown = sorted(set(values) - KNOWN_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            backbone = BackboneConfig.from_preset(
                values.get("preset", BackbonePreset.TINY),
                input_channels=int(values.get("input_channels", 1)),
                input_side=int(values["input_side"]) if values.get("input_side") not in (None, "") else None,
            )
            levels = values.get("levels")
            model = ModelConfig(
                backbone=backbone,
                levels=None if levels in (None, "", "auto") else levels,
                **{k: values[k] for k in ("tap", "variant", "num_classes", "alpha", "beta") if k in values},
            )
            train = TrainConfig(
                alpha=model.alpha, beta=model.beta,
                **{k: values[k] for k in _TRAIN_KEYS if k in values},
            )
            augment = AugmentConfig(**{k: values[k] for k in _AUGMENT_KEYS if k in values})
        except ValidationError as e:
            raise ConfigError(format_validation_error(e)) from e
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        return cls(model=model, train=train, augment=augment)

    @classmethod
    def from_file(cls, path: Optional[str] = None, overrides: Optional[Mapping[str, object]] = None) -> "RunConfig":
        """Load a key=value file (optional) and apply CLI overrides on top."""
        values: Dict[str, object] = {}
        if path:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            values.update(parse_key_values(text, source=str(path)))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def flat(self) -> Dict[str, str]:
        backbone = self.model.backbone
        values = {
            "preset": backbone.preset.value,
            "input_channels": backbone.input_channels,
            "input_side": backbone.input_side,
            "tap": self.model.tap.value,
            "levels": self.model.levels if self.model.levels is not None else "auto",
            "variant": self.model.variant.value,
            "num_classes": self.model.num_classes,
            "alpha": self.model.alpha,
            "beta": self.model.beta,
        }
        values.update(self.train.model_dump(mode="json", exclude={"alpha", "beta"}))
        values.update(self.augment.model_dump(mode="json"))
        return {k: str(v) for k, v in values.items()}

    def to_lines(self) -> str:
        flat = self.flat()
        return "".join(f"{key}={flat[key]}\n" for key in sorted(flat))

    def write_resolved(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "config.resolved"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("# fully resolved run configuration\n" + self.to_lines(), encoding="utf-8")
        return path

    def with_overrides(self, **overrides) -> "RunConfig":
        values = self.flat()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_mapping(values)
