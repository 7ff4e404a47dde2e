"""
Dataset manifest, preprocessed-image cache, loader pool and deterministic batching.

Every random stream is derived from (seed, epoch, sample index), so batches are
byte-identical regardless of the number of loader threads.
"""

import csv
import hashlib
import json
import os
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from autograd import Tensor
from config import AugmentConfig
from errors import DataError
from preprocessing import ImageSample, augment, hist_equalize, load_image

T = TypeVar("T")
R = TypeVar("R")

MANIFEST_HEADER = ["path", "label", "split"]
_SHUFFLE_STREAM = 0
_AUGMENT_STREAM = 1


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class ManifestRow(BaseModel):
    path: str = Field(min_length=1, description="Image path relative to the manifest directory")
    label: int = Field(ge=0)
    split: Split


class Manifest:
    """Rows of (path, label, split) plus the directory image paths are relative to."""

    def __init__(self, rows: Sequence[ManifestRow], root: Union[str, Path] = "."):
        self.rows = list(rows)
        self.root = Path(root)

    @property
    def num_classes(self) -> int:
        return max(r.label for r in self.rows) + 1 if self.rows else 0

    def rows_for(self, split: Union[Split, str]) -> List[ManifestRow]:
        split = Split(split)
        return [r for r in self.rows if r.split == split]

    def has_split(self, split: Union[Split, str]) -> bool:
        return any(r.split == Split(split) for r in self.rows)

    def validate(self) -> "Manifest":
        """
        Raises:
            DataError: duplicate paths, non-contiguous labels, or an empty train/test split
        """
        seen = set()
        for row in self.rows:
            if row.path in seen:
                raise DataError(f"manifest lists {row.path} more than once")
            seen.add(row.path)
        labels = {r.label for r in self.rows}
        if labels != set(range(len(labels))):
            raise DataError(f"manifest labels must be contiguous from 0, got {sorted(labels)}")
        for split in (Split.TRAIN, Split.TEST):
            if not self.has_split(split):
                raise DataError(f"manifest has no {split.value} rows")
        return self

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            for row in self.rows:
                writer.writerow([row.path, row.label, row.split.value])
        return path


def read_manifest(path: Union[str, Path]) -> Manifest:
    """Parse and validate a `path,label,split` CSV; image paths resolve against its directory."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != MANIFEST_HEADER:
                raise DataError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {reader.fieldnames}")
            rows = []
            for number, record in enumerate(reader, start=2):
                try:
                    rows.append(ManifestRow(**record))
                except (ValidationError, TypeError) as e:
                    raise DataError(f"{path}:{number}: invalid row {dict(record)}") from e
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    return Manifest(rows, root=path.parent).validate()


def carve_validation(manifest: Manifest, fraction: float = 0.2, seed: int = 0) -> Manifest:
    """Move a stratified fraction of each class's train rows to val (at least one stays in train)."""
    if not 0 < fraction < 1:
        raise DataError(f"validation fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    moved = set()
    for label in range(manifest.num_classes):
        indices = [i for i, r in enumerate(manifest.rows) if r.split == Split.TRAIN and r.label == label]
        if len(indices) < 2:
            continue
        count = min(max(1, int(round(fraction * len(indices)))), len(indices) - 1)
        moved.update(indices[k] for k in rng.permutation(len(indices))[:count])
    rows = [
        r.model_copy(update={"split": Split.VAL}) if i in moved else r
        for i, r in enumerate(manifest.rows)
    ]
    return Manifest(rows, root=manifest.root)


class ImageCache:
    """In-memory cache of loaded, equalized (pre-augmentation) images."""

    def __init__(self, max_entries: int = 4096):
        self.cache: "OrderedDict[str, ImageSample]" = OrderedDict()
        self.max_entries = max_entries
        self.hit_count = 0
        self.miss_count = 0
        self._lock = threading.Lock()

    def generate_cache_key(self, path: str, side: Optional[int], equalize: bool) -> str:
        cache_input = {"path": str(path), "side": side, "equalize": equalize}
        cache_str = json.dumps(cache_input, sort_keys=True)
        return hashlib.sha256(cache_str.encode()).hexdigest()[:16]

    def get(self, cache_key: str) -> Optional[ImageSample]:
        with self._lock:
            entry = self.cache.get(cache_key)
            if entry is None:
                self.miss_count += 1
                return None
            self.hit_count += 1
            return entry

    def set(self, cache_key: str, sample: ImageSample):
        with self._lock:
            self.cache[cache_key] = sample
            # Evict oldest entries (FIFO)
            while len(self.cache) > self.max_entries:
                self.cache.popitem(last=False)

    def get_stats(self) -> dict:
        total = self.hit_count + self.miss_count
        hit_rate = (self.hit_count / total * 100) if total > 0 else 0
        return {
            "entries": len(self.cache),
            "hits": self.hit_count,
            "misses": self.miss_count,
            "hit_rate_percent": round(hit_rate, 2),
        }

    def clear(self) -> int:
        with self._lock:
            count = len(self.cache)
            self.cache.clear()
            self.hit_count = 0
            self.miss_count = 0
            return count


def thread_count() -> int:
    """Worker cap from WLFT_THREADS (default 1)."""
    raw = os.getenv("WLFT_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        print(f"⚠️  WLFT_THREADS={raw!r} is not an integer, using 1 worker")
        return 1
    return max(1, value)


class LoaderPool:
    """
    Pool of loader threads.

    map() preserves input order, so results never depend on the worker count.
    """

    def __init__(self, size: Optional[int] = None):
        self.size = size or thread_count()
        self._executor: Optional[ThreadPoolExecutor] = None
        self.tasks_run = 0

    def map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        self.tasks_run += len(items)
        if self.size == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.size, thread_name_prefix="wlft-loader")
        return list(self._executor.map(fn, items))

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def get_pool_stats(self) -> dict:
        return {"workers": self.size, "tasks_run": self.tasks_run, "started": self._executor is not None}


# Global singleton pool instance
_loader_pool: Optional[LoaderPool] = None


def get_pool(size: Optional[int] = None) -> LoaderPool:
    """Get or create the global loader pool."""
    global _loader_pool
    if _loader_pool is None:
        _loader_pool = LoaderPool(size=size)
    return _loader_pool


class DataPipeline:
    """load -> equalize -> augment (train only) -> tensorize, for one manifest."""

    def __init__(
        self,
        manifest: Manifest,
        side: int,
        channels: int,
        augment_cfg: AugmentConfig,
        seed: int = 0,
        cache: Optional[ImageCache] = None,
        pool: Optional[LoaderPool] = None,
    ):
        self.manifest = manifest
        self.side = side
        self.channels = channels
        self.augment_cfg = augment_cfg
        self.seed = seed
        self.cache = cache if cache is not None else ImageCache()
        self.pool = pool if pool is not None else get_pool()

    def load(self, row: ManifestRow) -> ImageSample:
        """Loaded and equalized sample, served from the cache when possible."""
        equalize = self.augment_cfg.equalize
        key = self.cache.generate_cache_key(row.path, self.side, equalize)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        sample = load_image(self.manifest.root / row.path, side=self.side, label=row.label)
        if sample.channels != self.channels:
            raise DataError(f"{row.path}: expected {self.channels} channel(s), got {sample.channels}")
        if equalize:
            sample = hist_equalize(sample)
        self.cache.set(key, sample)
        return sample

    def epoch_order(self, split: Union[Split, str], epoch: int, shuffle: bool) -> np.ndarray:
        count = len(self.manifest.rows_for(split))
        if not shuffle:
            return np.arange(count)
        return np.random.default_rng([self.seed, epoch, _SHUFFLE_STREAM]).permutation(count)

    def sample_rng(self, epoch: int, index: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, epoch, _AUGMENT_STREAM, index])

    def batch_iter(
        self,
        split: Union[Split, str],
        batch_size: int,
        epoch: int = 0,
        shuffle: Optional[bool] = None,
        augment_samples: Optional[bool] = None,
    ) -> Iterator[Tuple[Tensor, np.ndarray, List[str]]]:
        """
        Yield (images [N, C, side, side], labels, paths); the last batch may be short.

        Shuffling and augmentation default to on for the train split only.

        Raises:
            DataError: empty split or an unreadable image
        """
        split = Split(split)
        rows = self.manifest.rows_for(split)
        if not rows:
            raise DataError(f"split {split.value} is empty")
        if batch_size < 1:
            raise DataError(f"batch size must be positive, got {batch_size}")
        is_train = split == Split.TRAIN
        shuffle = is_train if shuffle is None else shuffle
        augment_samples = is_train if augment_samples is None else augment_samples
        order = self.epoch_order(split, epoch, shuffle)

        def _prepare(index: int) -> ImageSample:
            sample = self.load(rows[index])
            if augment_samples:
                sample = augment(sample, self.augment_cfg, self.sample_rng(epoch, int(index)))
            return sample

        for start in range(0, len(order), batch_size):
            samples = self.pool.map(_prepare, list(order[start:start + batch_size]))
            images = Tensor(np.stack([s.pixels for s in samples]))
            labels = np.array([s.label for s in samples], dtype=np.int64)
            yield images, labels, [s.path for s in samples]

