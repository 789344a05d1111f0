#!/usr/bin/env python3
"""
🧠 Oracle Cache - memoization for expensive closed-form results
LRU cache keyed by array contents, used for LQR oracles and calibration states
"""

import hashlib
import threading
from typing import Any, Callable, Dict, Hashable, Optional, Sequence, TypeVar

import numpy as np
from cachetools import LRUCache

T = TypeVar("T")


class OracleCache:
    """Thread-safe LRU cache whose keys are digests of numpy arrays and scalars"""

    def __init__(self, max_size: int = 512):
        self.cache: LRUCache = LRUCache(maxsize=max_size)
        self.max_size = max_size
        self.lock = threading.Lock()
        self.stats = {
            "hits": 0,
            "misses": 0,
            "evictions": 0,
        }

    @staticmethod
    def generate_key(parts: Sequence[Any]) -> str:
        """Digest of the key parts; arrays contribute dtype, shape and raw bytes"""
        digest = hashlib.md5()
        for part in parts:
            if isinstance(part, np.ndarray):
                array = np.ascontiguousarray(part)
                digest.update(str(array.dtype).encode())
                digest.update(str(array.shape).encode())
                digest.update(array.tobytes())
            else:
                digest.update(repr(part).encode())
            digest.update(b"|")
        return digest.hexdigest()

    def get(self, key: Hashable) -> Optional[Any]:
        with self.lock:
            if key in self.cache:
                self.stats["hits"] += 1
                return self.cache[key]
            self.stats["misses"] += 1
        return None

    def put(self, key: Hashable, value: Any) -> None:
        with self.lock:
            if key not in self.cache and len(self.cache) >= self.max_size:
                self.stats["evictions"] += 1
            self.cache[key] = value

    def get_or_compute(self, parts: Sequence[Any], factory: Callable[[], T]) -> T:
        """Return the cached value for ``parts`` or compute and store it"""
        key = self.generate_key(parts)
        cached = self.get(key)
        if cached is not None:
            return cached
        value = factory()
        self.put(key, value)
        return value

    def get_stats(self) -> Dict[str, Any]:
        total_requests = self.stats["hits"] + self.stats["misses"]
        hit_rate = (self.stats["hits"] / total_requests * 100) if total_requests > 0 else 0

        return {
            "size": len(self.cache),
            "max_size": self.max_size,
            "hit_rate": f"{hit_rate:.1f}%",
            "hits": self.stats["hits"],
            "misses": self.stats["misses"],
            "evictions": self.stats["evictions"],
        }

    def clear(self) -> None:
        with self.lock:
            self.cache.clear()
            self.stats = {k: 0 for k in self.stats.keys()}
