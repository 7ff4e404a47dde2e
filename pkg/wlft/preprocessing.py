"""
Image loading, histogram equalization and training-time augmentation.

Canonical order: load (scale to [0,1], resize) -> equalize -> augment (train only).
"""

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from config import AugmentConfig
from errors import DataError
from netpbm import read_netpbm


@dataclass(frozen=True)
class ImageSample:
    """pixels: float array [C, H, W] in [0, 1]."""
    pixels: np.ndarray
    label: int = -1
    path: str = ""

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]


def _resize(raw: np.ndarray, side: int) -> np.ndarray:
    if raw.shape[0] == side and raw.shape[1] == side:
        return raw.astype(np.float64)
    planes = raw[..., None] if raw.ndim == 2 else raw
    resized = [
        np.asarray(Image.fromarray(planes[..., c].astype(np.float32)).resize((side, side), Image.Resampling.BILINEAR))
        for c in range(planes.shape[2])
    ]
    out = np.stack(resized, axis=-1).astype(np.float64)
    return out[..., 0] if raw.ndim == 2 else out


def load_image(path: Union[str, Path], side: Optional[int] = None, label: int = -1) -> ImageSample:
    """
    Read a P5/P6 file, scale to [0, 1] and resize to side x side (bilinear).

    Raises:
        DataError: naming the path, for any decode problem
    """
    raw = read_netpbm(path)
    pixels = raw.astype(np.float64)
    if side is not None:
        if side <= 0:
            raise DataError(f"{path}: resize side must be positive, got {side}")
        pixels = _resize(raw, side)
    pixels = np.clip(pixels / 255.0, 0.0, 1.0)
    chw = pixels[None] if pixels.ndim == 2 else np.transpose(pixels, (2, 0, 1))
    return ImageSample(np.ascontiguousarray(chw), label=label, path=str(path))


def _equalize_plane(plane: np.ndarray) -> np.ndarray:
    levels = np.clip(np.round(plane * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(hist) / levels.size
    cdf_min = cdf[levels.min()]
    if cdf_min >= 1.0:
        return plane.copy()
    return np.clip((cdf[levels] - cdf_min) / (1.0 - cdf_min), 0.0, 1.0)


def hist_equalize(img: ImageSample) -> ImageSample:
    """256-bin CDF equalization per channel; a constant channel is returned unchanged."""
    pixels = np.stack([_equalize_plane(plane) for plane in img.pixels])
    return replace(img, pixels=pixels)


def hflip(img: ImageSample) -> ImageSample:
    return replace(img, pixels=np.ascontiguousarray(img.pixels[:, :, ::-1]))


def augment(img: ImageSample, cfg: AugmentConfig, rng: np.random.Generator) -> ImageSample:
    """
    Random flip, rotation, affine (translate + scale) and brightness.

    All nine random values are drawn in a fixed order whether or not a transform
    fires, so the stream position only depends on the number of samples seen.
    Rotation and affine are composed into one bilinear, edge-replicating resample.
    """
    u_flip, u_rotate, u_affine, u_bright = rng.random(4)
    angle = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg)
    shift = rng.uniform(-cfg.translate_frac, cfg.translate_frac, size=2)
    scale = rng.uniform(cfg.scale_min, cfg.scale_max)
    factor = rng.uniform(cfg.brightness_min, cfg.brightness_max)
    if not cfg.augment:
        return img

    out = img
    if u_flip < cfg.flip_p:
        out = hflip(out)

    rotate = u_rotate < cfg.rotate_p
    affine = u_affine < cfg.affine_p
    if rotate or affine:
        theta = math.radians(angle) if rotate else 0.0
        s = scale if affine else 1.0
        _, h, w = out.pixels.shape
        t = np.array([shift[0] * h, shift[1] * w]) if affine else np.zeros(2)
        centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        cos, sin = math.cos(theta), math.sin(theta)
        # output -> input coordinates: inverse of (rotate, scale about centre, translate)
        matrix = np.array([[cos, sin], [-sin, cos]]) / s
        offset = centre - matrix @ (centre + t)
        planes = [
            ndimage.affine_transform(plane, matrix, offset=offset, order=1, mode="nearest")
            for plane in out.pixels
        ]
        out = replace(out, pixels=np.stack(planes))

    if u_bright < cfg.brightness_p:
        out = replace(out, pixels=np.clip(out.pixels * factor, 0.0, 1.0))
    return out
