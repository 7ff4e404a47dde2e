"""
Netpbm codec, preprocessing/augmentation and the manifest-driven batch pipeline.
"""

import numpy as np
import pytest

from config import AugmentConfig
from dataset import DataPipeline, ImageCache, LoaderPool, Manifest, ManifestRow, Split, carve_validation, read_manifest
from errors import DataError
from netpbm import read_netpbm, write_netpbm
from preprocessing import ImageSample, augment, hflip, hist_equalize, load_image


def _write_dataset(root, counts, side=8, seed=0):
    """counts: {(label, split): n}. Writes random gray images and a manifest; returns its path."""
    rng = np.random.default_rng(seed)
    rows = []
    for (label, split), n in counts.items():
        for i in range(n):
            rel = f"c{label}/{split}_{i}.pgm"
            write_netpbm(root / rel, rng.integers(0, 256, size=(side, side), dtype=np.uint8))
            rows.append(ManifestRow(path=rel, label=label, split=split))
    return Manifest(rows, root=root).write(root / "manifest.csv")


def test_read_p5_example(tmp_path):
    path = tmp_path / "tiny.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 85, 170, 255]))
    assert read_netpbm(path).tolist() == [[0, 85], [170, 255]]
    sample = load_image(path)
    assert sample.pixels.shape == (1, 2, 2)
    assert np.allclose(sample.pixels[0], [[0.0, 1 / 3], [2 / 3, 1.0]])


def test_read_p6_with_comment(tmp_path):
    path = tmp_path / "color.ppm"
    path.write_bytes(b"P6\n# made by hand\n1 2\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
    sample = load_image(path)
    assert sample.channels == 3
    assert sample.pixels[:, 0, 0].tolist() == [1.0, 0.0, 0.0]
    assert sample.pixels[:, 1, 0].tolist() == [0.0, 0.0, 1.0]


@pytest.mark.parametrize("raw", [
    b"P2\n2 2\n255\n0 0 0 0",
    b"P5\n2 2\n65535\n" + bytes(8),
    b"P5\n2 2\n255\n" + bytes(3),
    b"P5\n2 x\n255\n" + bytes(4),
    b"P5\n2",
])
def test_bad_netpbm_names_the_path(tmp_path, raw):
    path = tmp_path / "broken.pgm"
    path.write_bytes(raw)
    with pytest.raises(DataError) as excinfo:
        read_netpbm(path)
    assert "broken.pgm" in str(excinfo.value)


def test_write_read_round_trip(tmp_path):
    pixels = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    assert np.array_equal(read_netpbm(write_netpbm(tmp_path / "rt.ppm", pixels)), pixels)
    with pytest.raises(DataError):
        write_netpbm(tmp_path / "bad.pgm", pixels.astype(np.float32))


def test_load_image_resizes(tmp_path):
    write_netpbm(tmp_path / "big.pgm", np.full((12, 20), 200, dtype=np.uint8))
    sample = load_image(tmp_path / "big.pgm", side=8)
    assert sample.pixels.shape == (1, 8, 8)
    assert np.allclose(sample.pixels, 200 / 255, atol=1e-6)


def test_equalize_constant_image_unchanged():
    img = ImageSample(np.full((1, 4, 4), 0.4))
    assert np.array_equal(hist_equalize(img).pixels, img.pixels)


def test_equalize_two_values_maps_to_extremes():
    pixels = np.zeros((1, 4, 4))
    pixels[0, :, 2:] = 0.6
    out = hist_equalize(ImageSample(pixels)).pixels
    assert set(np.unique(out)) == {0.0, 1.0}


def test_equalize_flattens_and_is_idempotent():
    rng = np.random.default_rng(1)
    skewed = ImageSample(rng.beta(2.0, 8.0, size=(1, 32, 32)))
    once = hist_equalize(skewed)
    hist_before = np.histogram(skewed.pixels, bins=8, range=(0, 1))[0]
    hist_after = np.histogram(once.pixels, bins=8, range=(0, 1))[0]
    assert hist_after.std() < hist_before.std()
    twice = hist_equalize(once)
    assert np.max(np.abs(twice.pixels - once.pixels)) <= 1 / 255 + 1e-9


def test_augment_disabled_is_identity():
    img = ImageSample(np.random.default_rng(2).random((1, 8, 8)), label=3)
    out = augment(img, AugmentConfig.disabled(), np.random.default_rng(0))
    assert np.array_equal(out.pixels, img.pixels)
    off = AugmentConfig(augment=False)
    assert augment(img, off, np.random.default_rng(0)) is img


def test_hflip_is_an_involution():
    img = ImageSample(np.random.default_rng(3).random((3, 4, 6)))
    assert np.array_equal(hflip(hflip(img)).pixels, img.pixels)
    assert np.array_equal(hflip(img).pixels[:, :, 0], img.pixels[:, :, -1])


def test_augment_is_seeded_and_keeps_label_and_range():
    img = ImageSample(np.random.default_rng(4).random((1, 16, 16)), label=2)
    cfg = AugmentConfig(flip_p=1, rotate_p=1, affine_p=1, brightness_p=1)
    a = augment(img, cfg, np.random.default_rng([5, 0, 1, 7]))
    b = augment(img, cfg, np.random.default_rng([5, 0, 1, 7]))
    assert np.array_equal(a.pixels, b.pixels)
    assert a.label == 2
    assert a.pixels.shape == img.pixels.shape
    assert a.pixels.min() >= 0.0 and a.pixels.max() <= 1.0


def test_manifest_round_trip_and_validation(tmp_path):
    path = _write_dataset(tmp_path, {(0, "train"): 3, (1, "train"): 3, (0, "test"): 1, (1, "test"): 1})
    manifest = read_manifest(path)
    assert manifest.num_classes == 2
    assert len(manifest.rows_for(Split.TRAIN)) == 6
    assert not manifest.has_split(Split.VAL)


@pytest.mark.parametrize("body", [
    "a.pgm,0,train\na.pgm,0,test\n",
    "a.pgm,0,train\nb.pgm,2,test\n",
    "a.pgm,0,train\nb.pgm,1,train\n",
    "a.pgm,0,train\nb.pgm,-1,test\n",
    "a.pgm,0,holdout\nb.pgm,1,test\n",
    "a.pgm,0,train,extra\nb.pgm,1,test\n",
])
def test_invalid_manifests(tmp_path, body):
    path = tmp_path / "manifest.csv"
    path.write_text("path,label,split\n" + body)
    with pytest.raises(DataError):
        read_manifest(path)


def test_manifest_header_is_checked(tmp_path):
    path = tmp_path / "manifest.csv"
    path.write_text("file,class,split\na.pgm,0,train\n")
    with pytest.raises(DataError):
        read_manifest(path)


def test_carve_validation_is_stratified(tmp_path):
    path = _write_dataset(tmp_path, {(0, "train"): 10, (1, "train"): 5, (0, "test"): 1, (1, "test"): 1})
    carved = carve_validation(read_manifest(path), fraction=0.2, seed=3)
    val = carved.rows_for(Split.VAL)
    assert sorted(r.label for r in val) == [0, 0, 1]
    assert len(carved.rows_for(Split.TRAIN)) == 12
    assert carve_validation(read_manifest(path), 0.2, 3).rows == carved.rows


def _pipeline(path, **kwargs):
    return DataPipeline(read_manifest(path), side=8, channels=1, augment_cfg=AugmentConfig(), seed=9, **kwargs)


def test_batches_cover_the_split_once(tmp_path):
    path = _write_dataset(tmp_path, {(0, "train"): 5, (1, "train"): 5, (0, "test"): 1, (1, "test"): 1})
    pipeline = _pipeline(path, pool=LoaderPool(1))
    batches = list(pipeline.batch_iter(Split.TRAIN, 8, epoch=0))
    assert [len(labels) for _, labels, _ in batches] == [8, 2]
    assert batches[0][0].shape == (8, 1, 8, 8)
    paths = [p for _, _, ps in batches for p in ps]
    assert sorted(paths) == sorted(str(pipeline.manifest.root / r.path) for r in pipeline.manifest.rows_for("train"))
    labels = np.concatenate([labels for _, labels, _ in batches])
    assert sorted(labels.tolist()) == [0] * 5 + [1] * 5


def test_batches_are_reproducible_and_thread_independent(tmp_path):
    path = _write_dataset(tmp_path, {(0, "train"): 6, (1, "train"): 6, (0, "test"): 2, (1, "test"): 2})
    serial = list(_pipeline(path, pool=LoaderPool(1)).batch_iter(Split.TRAIN, 4, epoch=2))
    pool = LoaderPool(4)
    try:
        threaded = list(_pipeline(path, pool=pool).batch_iter(Split.TRAIN, 4, epoch=2))
    finally:
        pool.close()
    for (xa, la, pa), (xb, lb, pb) in zip(serial, threaded):
        assert pa == pb
        assert np.array_equal(la, lb)
        assert np.array_equal(xa.data, xb.data)
    other_epoch = list(_pipeline(path, pool=LoaderPool(1)).batch_iter(Split.TRAIN, 4, epoch=3))
    assert [p for _, _, ps in other_epoch for p in ps] != [p for _, _, ps in serial for p in ps]


def test_evaluation_split_is_ordered_and_unaugmented(tmp_path):
    path = _write_dataset(tmp_path, {(0, "train"): 2, (1, "train"): 2, (0, "test"): 2, (1, "test"): 2})
    pipeline = _pipeline(path, pool=LoaderPool(1))
    (images, labels, paths), = list(pipeline.batch_iter(Split.TEST, 8))
    expected = [str(pipeline.manifest.root / r.path) for r in pipeline.manifest.rows_for(Split.TEST)]
    assert paths == expected
    first = hist_equalize(load_image(expected[0], side=8))
    assert np.allclose(images.data[0], first.pixels, atol=1e-6)


def test_channel_mismatch_and_empty_split(tmp_path):
    path = _write_dataset(tmp_path, {(0, "train"): 1, (1, "train"): 1, (0, "test"): 1, (1, "test"): 1})
    color = DataPipeline(read_manifest(path), side=8, channels=3, augment_cfg=AugmentConfig(), pool=LoaderPool(1))
    with pytest.raises(DataError):
        next(color.batch_iter(Split.TEST, 2))
    with pytest.raises(DataError):
        next(_pipeline(path, pool=LoaderPool(1)).batch_iter(Split.VAL, 2))


def test_cache_serves_repeat_loads(tmp_path):
    path = _write_dataset(tmp_path, {(0, "train"): 2, (1, "train"): 2, (0, "test"): 1, (1, "test"): 1})
    cache = ImageCache()
    pipeline = _pipeline(path, cache=cache, pool=LoaderPool(1))
    list(pipeline.batch_iter(Split.TEST, 2))
    list(pipeline.batch_iter(Split.TEST, 2))
    stats = cache.get_stats()
    assert stats["misses"] == 2
    assert stats["hits"] == 2
    assert cache.clear() == 2
