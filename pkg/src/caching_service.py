"""
Feature cache for expensive per-session passes (attitude observer, window
tensors) shared by training and estimation.
"""
import functools
import hashlib
import logging
import os
from typing import Any, Callable, Optional

import numpy as np
import pandas as pd
from cachetools import LRUCache
from diskcache import Cache as DiskCache

from .config import CacheType, settings

logger = logging.getLogger(__name__)


class FeatureCache:
    """Key/value cache with memory, disk or no backend."""

    def __init__(
        self,
        cache_type: CacheType = settings.CACHE_TYPE,
        maxsize: int = settings.CACHE_MAXSIZE,
        cache_dir: Optional[str] = settings.CACHE_DIR,
    ):
        """
        Initialize the cache.

        Args:
            cache_type: memory, disk or none
            maxsize: Maximum number of entries (memory) or size in MB (disk)
            cache_dir: Directory for the disk backend
        """
        self.cache_type = CacheType(cache_type)
        self.maxsize = maxsize
        self.cache_dir = cache_dir or os.path.join(os.getcwd(), ".aeolus_cache")
        self.hits = 0
        self.misses = 0

        if self.cache_type == CacheType.MEMORY:
            self.cache = LRUCache(maxsize=maxsize)
        elif self.cache_type == CacheType.DISK:
            os.makedirs(self.cache_dir, exist_ok=True)
            self.cache = DiskCache(
                directory=self.cache_dir,
                size_limit=maxsize * 1024 * 1024,
                eviction_policy="least-recently-used",
            )
        else:
            self.cache = None

        logger.debug(f"Initialized {self.cache_type.value} feature cache (maxsize={maxsize})")

    @property
    def enabled(self) -> bool:
        return self.cache is not None

    def get(self, key: str) -> Any:
        """Cached value or None."""
        if self.cache is None:
            return None
        try:
            value = self.cache.get(key)
        except Exception as e:
            logger.error(f"Error reading feature cache (key: {key}): {e}", exc_info=True)
            return None
        if value is None:
            self.misses += 1
        else:
            self.hits += 1
        return value

    def set(self, key: str, value: Any) -> None:
        if self.cache is None:
            return
        try:
            self.cache[key] = value
        except Exception as e:
            logger.error(f"Error writing feature cache (key: {key}): {e}", exc_info=True)

    def clear(self) -> None:
        if self.cache is not None:
            self.cache.clear()
        self.hits = 0
        self.misses = 0

    def close(self) -> None:
        if self.cache_type == CacheType.DISK:
            self.cache.close()

    def get_stats(self) -> dict:
        return {
            "type": self.cache_type.value,
            "size": len(self.cache) if self.cache is not None else 0,
            "max_size": self.maxsize,
            "hits": self.hits,
            "misses": self.misses,
        }


def _fingerprint(value: Any, digest) -> None:
    if isinstance(value, np.ndarray):
        digest.update(str((value.dtype, value.shape)).encode("utf-8"))
        digest.update(np.ascontiguousarray(value).tobytes())
    elif isinstance(value, pd.DataFrame):
        digest.update(",".join(map(str, value.columns)).encode("utf-8"))
        _fingerprint(value.to_numpy(dtype=float, na_value=np.nan), digest)
    elif isinstance(value, (list, tuple)):
        for item in value:
            _fingerprint(item, digest)
    elif isinstance(value, dict):
        for key in sorted(value):
            digest.update(str(key).encode("utf-8"))
            _fingerprint(value[key], digest)
    elif hasattr(value, "json"):
        digest.update(value.json(sort_keys=True).encode("utf-8"))
    else:
        digest.update(repr(value).encode("utf-8"))


def content_key(*args, **kwargs) -> str:
    """sha256 of the argument contents; arrays and frames hash by value."""
    digest = hashlib.sha256()
    _fingerprint(list(args), digest)
    _fingerprint(kwargs, digest)
    return digest.hexdigest()


def cached(cache: FeatureCache, key_prefix: str = "") -> Callable:
    """
    Decorator caching a function's result by the content of its arguments.

    Args:
        cache: FeatureCache instance
        key_prefix: Prefix for cache keys
    """
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            if not cache.enabled:
                return func(*args, **kwargs)
            cache_key = f"{key_prefix}:{func.__name__}:{content_key(*args, **kwargs)}"
            result = cache.get(cache_key)
            if result is not None:
                logger.debug(f"Cache hit for {key_prefix}:{func.__name__}")
                return result
            result = func(*args, **kwargs)
            cache.set(cache_key, result)
            return result
        return wrapper
    return decorator


feature_cache = FeatureCache()
