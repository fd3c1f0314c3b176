"""Deterministic tile-parallel helpers.

Work is split into tiles of fixed height along the leading grid axis, so the
decomposition, and therefore every floating point sum, depends only on the
problem size. The worker count changes wall time, never results.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterator, List, Sequence, Tuple, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")

# Target number of grid cells handled by one task.
TILE_CELLS = 1 << 16

# Rows of the leading axis handled by one task when the row size is unknown.
TILE_ROWS = 64

_WORKERS = 1


def set_workers(count: int) -> None:
    """Set the number of worker threads used by tile and sample maps."""

    global _WORKERS
    if count is None or int(count) < 1:
        count = os.cpu_count() or 1
    _WORKERS = int(count)
    logger.debug("worker count set to %d", _WORKERS)


def get_workers() -> int:
    """Current worker count used by the tile and sample maps."""

    return _WORKERS


@contextmanager
def worker_scope(count: int) -> Iterator[int]:
    """Temporarily change the worker count."""

    previous = _WORKERS
    set_workers(count)
    try:
        yield _WORKERS
    finally:
        set_workers(previous)


def rows_per_tile(row_size: int) -> int:
    """Tile height for rows of ``row_size`` cells; depends only on the grid shape."""

    return max(1, TILE_CELLS // max(1, int(row_size)))


def tile_ranges(length: int, rows: int = TILE_ROWS) -> List[Tuple[int, int]]:
    """Split ``range(length)`` into consecutive ``[lo, hi)`` tiles."""

    if length <= 0:
        return []
    return [(lo, min(lo + rows, length)) for lo in range(0, length, rows)]


def _run(fn: Callable[..., T], jobs: Sequence) -> List[T]:
    if _WORKERS <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]

    def call(job):
        try:
            return fn(*job)
        except Exception:
            logger.exception("parallel task %r failed", job)
            raise

    with ThreadPoolExecutor(max_workers=_WORKERS) as pool:
        # map() keeps submission order
        return list(pool.map(call, jobs))


def map_tiles(fn: Callable[[int, int], T], length: int, rows: int = TILE_ROWS) -> List[T]:
    """Apply ``fn(lo, hi)`` to every tile, results in tile order."""

    return _run(fn, tile_ranges(length, rows))


def map_samples(fn: Callable[[int], T], count: int) -> List[T]:
    """Apply ``fn(i)`` for ``i in range(count)``, results in index order."""

    return _run(fn, [(i,) for i in range(count)])


def pairwise_sum(values: Sequence[float]) -> float:
    """Sum with a balanced binary tree fixed by ``len(values)``."""

    items = [float(v) for v in values]
    if not items:
        return 0.0
    while len(items) > 1:
        paired = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            paired.append(items[-1])
        items = paired
    return items[0]


def tiled_array(fn: Callable[[int, int], np.ndarray], length: int, rows: int = TILE_ROWS) -> np.ndarray:
    """Concatenate per-tile arrays along axis 0."""

    parts = map_tiles(fn, length, rows)
    if not parts:
        return np.empty((0,))
    return np.concatenate(parts, axis=0)
