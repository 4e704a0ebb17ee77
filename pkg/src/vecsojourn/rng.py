"""Counter-based random streams and order-independent replication blocks.

Replications are grouped into fixed-size blocks.  Every block owns a Philox
stream keyed by ``(master_seed, purpose, block_index)`` so the numbers a
replication sees depend only on the seed and its index, never on how many
worker threads processed the blocks or in which order they finished.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

BLOCK_SIZE = 500

# stream purposes; distinct streams keep coupled runs aligned when one
# consumer draws a variable number of variates (e.g. rejection sampling)
FIELD = 1
EXPONENTIAL = 2
UNIFORM = 3
INDEX = 4
AUX = 5


def stream(seed: int, purpose: int, block: int, *extra: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(purpose), int(block), *map(int, extra)])
    return np.random.Generator(np.random.Philox(ss))


def blocks(n: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int, int]]:
    """Split ``range(n)`` into ``(block_index, start, stop)`` triples."""
    return [(i, s, min(s + block_size, n)) for i, s in enumerate(range(0, n, block_size))]


def run_blocks(
    fn: Callable[[int, int, int], object],
    n: int,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> list:
    """Evaluate ``fn(block, start, stop)`` over all blocks, results in block order."""
    work = blocks(n, block_size)
    if threads <= 1 or len(work) <= 1:
        return [fn(*w) for w in work]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda w: fn(*w), work))


def pairwise_sum(values: Sequence[float] | np.ndarray) -> float:
    """Pairwise (tree) summation in a fixed order."""
    a = np.asarray(values, dtype=float).ravel()
    if a.size == 0:
        return 0.0
    while a.size > 1:
        if a.size % 2:
            a = np.append(a, 0.0)
        a = a[0::2] + a[1::2]
    return float(a[0])
