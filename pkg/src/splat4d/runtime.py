"""Worker-thread control.

EX4DGS_THREADS caps the number of worker threads for tile kernels and
image loading.  Kernels release the GIL, so Python threads give real
parallelism; tiles own disjoint outputs, so results are independent of
the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_override: int | None = None
_pool: ThreadPoolExecutor | None = None
_pool_size = 0


_CPU_COUNT = os.cpu_count() or 1


def num_threads() -> int:
    if _override is not None:
        return _override
    env = os.environ.get("EX4DGS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return _CPU_COUNT


def set_num_threads(n: int | None):
    """Process-wide override, mainly for tests; None restores the env default."""
    global _override
    _override = None if n is None else max(1, int(n))


def _executor(workers: int) -> ThreadPoolExecutor:
    global _pool, _pool_size
    if _pool is None or _pool_size < workers:
        if _pool is not None:
            _pool.shutdown(wait=False)
        _pool = ThreadPoolExecutor(max_workers=workers)
        _pool_size = workers
    return _pool


def run_tiled(fn, n_tiles: int, *args):
    """Call fn(tile_lo, tile_hi, *args) over chunks of the tile range.

    The chunking never changes results, only who computes which tile.
    """
    workers = min(num_threads(), max(1, n_tiles))
    if workers == 1 or n_tiles <= 1:
        fn(0, n_tiles, *args)
        return
    chunk = (n_tiles + workers - 1) // workers
    bounds = [(lo, min(lo + chunk, n_tiles)) for lo in range(0, n_tiles, chunk)]
    futures = [_executor(workers).submit(fn, lo, hi, *args) for lo, hi in bounds]
    for f in futures:
        f.result()
