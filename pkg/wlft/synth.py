"""
Synthetic oriented-grating texture dataset and a fixed-Haar energy baseline.

Class k is a sinusoidal grating with its own spatial frequency and orientation;
each image draws a random phase and additive Gaussian noise. The baseline checks
that the task is learnable from multi-scale detail energies alone.
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from autograd import Tensor, default_dtype, no_grad
from dataset import Manifest, ManifestRow, Split
from errors import DataError
from netpbm import write_netpbm
from preprocessing import load_image
from wavelets import haar_split, max_levels

AMPLITUDE = 0.35
NOISE_SIGMA = 0.1
TRAIN_FRACTION = 0.8


def grating_params(k: int, num_classes: int, side: int):
    """(cycles across the image, orientation in radians) of class k."""
    top = side / 4.0
    cycles = 2.0 + k * (top - 2.0) / max(1, num_classes - 1)
    return cycles, k * math.pi / num_classes


def render_grating(k: int, num_classes: int, side: int, rng: np.random.Generator) -> np.ndarray:
    cycles, theta = grating_params(k, num_classes, side)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    rows, cols = np.mgrid[0:side, 0:side].astype(np.float64)
    projection = cols * math.cos(theta) + rows * math.sin(theta)
    image = 0.5 + AMPLITUDE * np.sin(2.0 * math.pi * cycles * projection / side + phase)
    image += rng.normal(0.0, NOISE_SIGMA, size=image.shape)
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def synth_textures(out_dir: Union[str, Path], num_classes: int, per_class: int, side: int, seed: int) -> Manifest:
    """
    Write <out_dir>/class<k>/img<i>.pgm and <out_dir>/manifest.csv.

    The first 80% of each class's images are train, the rest test.

    Raises:
        DataError: fewer than two classes, too few images for both splits, or a bad side
    """
    if num_classes < 2:
        raise DataError(f"synthetic dataset needs at least 2 classes, got {num_classes}")
    if per_class < 2:
        raise DataError(f"synthetic dataset needs at least 2 images per class, got {per_class}")
    if side < 8:
        raise DataError(f"synthetic images need side >= 8, got {side}")
    out_dir = Path(out_dir)
    n_train = min(max(1, int(round(TRAIN_FRACTION * per_class))), per_class - 1)
    rows: List[ManifestRow] = []
    for k in range(num_classes):
        for i in range(per_class):
            relative = f"class{k}/img{i}.pgm"
            write_netpbm(out_dir / relative, render_grating(k, num_classes, side, np.random.default_rng([seed, k, i])))
            rows.append(ManifestRow(path=relative, label=k, split=Split.TRAIN if i < n_train else Split.TEST))
    manifest = Manifest(rows, root=out_dir).validate()
    manifest.write(out_dir / "manifest.csv")
    return manifest


def haar_energy_features(pixels: np.ndarray, levels: Optional[int] = None) -> np.ndarray:
    """Log mean-square energy of LH, HL, HH at every fixed Haar level, per channel."""
    levels = levels or max_levels(min(pixels.shape[-2:]))
    features = []
    with default_dtype(np.float64), no_grad():
        current = Tensor(pixels[None])
        for _ in range(levels):
            q = haar_split(current)
            for band in (q.lh, q.hl, q.hh):
                features.append(np.log(np.mean(band.data[0] ** 2, axis=(1, 2)) + 1e-12))
            current = q.ll
    return np.concatenate(features)


def haar_energy_baseline(manifest: Manifest, side: Optional[int] = None) -> Dict[str, float]:
    """Nearest-centroid classifier on Haar energy features; train centroids, test accuracy."""
    def _features(split: Split):
        rows = manifest.rows_for(split)
        feats = np.stack([haar_energy_features(load_image(manifest.root / r.path, side=side).pixels) for r in rows])
        return feats, np.array([r.label for r in rows])

    train_x, train_y = _features(Split.TRAIN)
    test_x, test_y = _features(Split.TEST)
    centroids = np.stack([train_x[train_y == c].mean(axis=0) for c in range(manifest.num_classes)])
    distances = ((test_x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    predictions = distances.argmin(axis=1)
    return {
        "accuracy": float((predictions == test_y).mean()),
        "train_samples": float(len(train_y)),
        "test_samples": float(len(test_y)),
    }
