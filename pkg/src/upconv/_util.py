"""Small shared helpers that belong to no one module."""

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError

_THREADS_ENV = "UPCONV_THREADS"


def worker_count():
    """Worker cap for embarrassingly parallel sweeps.

    Reads the UPCONV_THREADS environment variable; unset or invalid
    values fall back to 1. Results never depend on the count, only
    wall time does.
    """
    raw = os.environ.get(_THREADS_ENV, "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{_THREADS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"{_THREADS_ENV} must be >= 1, got {n}")
    return n


def parallel_map(fn, items):
    """Order-preserving map over `items`, threaded when allowed."""
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
