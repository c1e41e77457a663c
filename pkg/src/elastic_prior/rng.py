"""Counter-based random streams and deterministic block-parallel execution.

Every stream is a Philox generator keyed by ``(seed, *keys)``. Work over N
replicates is cut into fixed blocks of ``BLOCK`` replicates, and block ``i``
always draws from the stream keyed by its index. Results therefore do not
depend on how many threads run the blocks.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List

import numpy as np

BLOCK = 1000


def _key_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(k)
    if isinstance(k, float):
        return zlib.crc32(repr(k).encode())
    return zlib.crc32(str(k).encode())


def substream(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence([_key_int(seed), *(_key_int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))


def default_threads() -> int:
    env = os.environ.get("ELASTIC_PRIOR_THREADS")
    return max(1, int(env)) if env else 1


def run_blocks(fn: Callable, n: int, seed: int, *keys, threads: int | None = None) -> List:
    """Call ``fn(rng, size)`` for each block and return results in block order."""
    sizes = [min(BLOCK, n - start) for start in range(0, n, BLOCK)]
    jobs = [(substream(seed, *keys, i), size) for i, size in enumerate(sizes)]
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(jobs) <= 1:
        return [fn(rng, size) for rng, size in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
