"""Point-chunked evaluation with an optional thread pool.

The thread count comes from the AECURV_THREADS environment variable (default
1).  Chunks are reassembled in input order, so results do not depend on the
thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

DEFAULT_CHUNK = 256


def thread_count() -> int:
    raw = os.environ.get("AECURV_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"AECURV_THREADS must be an integer, got {raw!r}") from None
    return max(1, value)


def chunk_size_for(dim: int, order: int) -> int:
    """Smaller chunks for large jets so intermediate pair arrays stay modest."""
    if order >= 5:
        return 16 if dim >= 6 else 32
    if order == 4:
        return 32 if dim >= 6 else 64
    return DEFAULT_CHUNK


def map_points(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray, chunk: int) -> np.ndarray:
    """Apply ``fn`` to row chunks of ``points`` and concatenate along the last axis."""
    points = np.asarray(points, dtype=float)
    pieces = [points[i:i + chunk] for i in range(0, len(points), chunk)]
    threads = min(thread_count(), len(pieces))
    if threads <= 1:
        results = [fn(p) for p in pieces]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fn, pieces))
    return np.concatenate(results, axis=-1)
