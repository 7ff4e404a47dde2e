"""Binary PGM (P5) / PPM (P6) codec with 8-bit samples."""

import io
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from errors import DataError

_CHANNELS = {b"P5": 1, b"P6": 3}


def _header(raw: bytes, path: Path) -> Tuple[bytes, int, int, int, int]:
    """(magic, width, height, maxval, data offset); '#' comments are skipped."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise DataError(f"{path}: truncated netpbm header")
        if raw[pos:pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    magic = tokens[0]
    if magic not in _CHANNELS:
        raise DataError(f"{path}: unsupported magic number {magic!r} (expected P5 or P6)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise DataError(f"{path}: malformed netpbm header") from e
    if width <= 0 or height <= 0:
        raise DataError(f"{path}: invalid image size {width}x{height}")
    if maxval != 255:
        raise DataError(f"{path}: maxval {maxval} is not supported (expected 255)")
    # exactly one whitespace byte separates the header from the raster
    return magic, width, height, maxval, pos + 1


def read_netpbm(path: Union[str, Path]) -> np.ndarray:
    """
    Decode a P5/P6 file.

    Returns:
        uint8 array [H, W] for P5 or [H, W, 3] for P6

    Raises:
        DataError: unreadable file, unsupported magic, maxval other than 255, truncated raster
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"{path}: cannot read image: {e}") from e
    magic, width, height, _, offset = _header(raw, path)
    expected = width * height * _CHANNELS[magic]
    if len(raw) - offset < expected:
        raise DataError(f"{path}: truncated raster ({len(raw) - offset} of {expected} bytes)")
    try:
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise DataError(f"{path}: cannot decode image: {e}") from e


def write_netpbm(path: Union[str, Path], pixels: np.ndarray) -> Path:
    """Encode uint8 [H, W] as P5 or [H, W, 3] as P6."""
    path = Path(path)
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise DataError(f"{path}: netpbm output must be uint8, got {pixels.dtype}")
    if not (pixels.ndim == 2 or (pixels.ndim == 3 and pixels.shape[2] == 3)):
        raise DataError(f"{path}: cannot encode array of shape {pixels.shape} as netpbm")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PPM")
    return path
