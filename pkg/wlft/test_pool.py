#!/usr/bin/env python3
"""
Tests for the image loader pool and the image cache.
"""

import threading
import time

import numpy as np

import dataset
from dataset import ImageCache, LoaderPool, get_pool, thread_count
from preprocessing import ImageSample


def test_pool_preserves_order():
    """Results come back in input order whatever the worker count."""
    print("Test 1: Order Preservation")
    print("-" * 50)

    def slow_square(value):
        time.sleep(0.001 * (10 - value))
        return value * value

    pool = LoaderPool(size=4)
    try:
        assert pool.map(slow_square, list(range(10))) == [v * v for v in range(10)]
        stats = pool.get_pool_stats()
    finally:
        pool.close()
    assert stats["workers"] == 4
    assert stats["tasks_run"] == 10
    assert stats["started"]
    print("✅ Pool keeps input order")


def test_pool_uses_worker_threads():
    print("Test 2: Concurrent Usage")
    print("-" * 50)
    seen = set()
    lock = threading.Lock()

    def record(_):
        with lock:
            seen.add(threading.current_thread().name)
        time.sleep(0.01)

    pool = LoaderPool(size=3)
    try:
        pool.map(record, list(range(9)))
    finally:
        pool.close()
    assert all(name.startswith("wlft-loader") for name in seen)
    print(f"✅ {len(seen)} loader thread(s) used")


def test_single_worker_runs_inline():
    pool = LoaderPool(size=1)
    assert pool.map(lambda v: v + 1, [1, 2]) == [2, 3]
    assert not pool.get_pool_stats()["started"]


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("WLFT_THREADS", "6")
    assert thread_count() == 6
    monkeypatch.setenv("WLFT_THREADS", "zero")
    assert thread_count() == 1
    monkeypatch.delenv("WLFT_THREADS")
    assert thread_count() == 1


def test_global_pool_is_a_singleton(monkeypatch):
    monkeypatch.setattr(dataset, "_loader_pool", None)
    first = get_pool(size=2)
    assert get_pool() is first
    assert first.size == 2


def test_cache_statistics_and_eviction():
    print("Test 3: Cache Statistics")
    print("-" * 50)
    cache = ImageCache(max_entries=2)
    keys = [cache.generate_cache_key(f"img{i}.pgm", 32, True) for i in range(3)]
    assert len(set(keys)) == 3
    assert cache.generate_cache_key("img0.pgm", 32, False) != keys[0]
    sample = ImageSample(np.zeros((1, 2, 2)))
    for key in keys:
        assert cache.get(key) is None
        cache.set(key, sample)
    assert cache.get(keys[0]) is None  # evicted first
    assert cache.get(keys[2]) is sample
    stats = cache.get_stats()
    assert stats == {"entries": 2, "hits": 1, "misses": 4, "hit_rate_percent": 20.0}
    print("✅ Cache statistics are accurate")


if __name__ == "__main__":
    print("=" * 50)
    print("Loader Pool Tests")
    print("=" * 50)
    test_pool_preserves_order()
    test_pool_uses_worker_threads()
    test_cache_statistics_and_eviction()
    print("=" * 50)
    print("✅ All tests passed!")
    print("=" * 50)
