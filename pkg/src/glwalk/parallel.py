"""Map-reduce over fixed-size blocks of independent replicas.

Block ``k`` always draws from ``RngStream(seed, stream).generator(purpose, k)``,
so results are identical whatever the number of worker processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from glwalk.sampler import RngStream

BLOCK_SIZE = 4096


def block_sizes(replicas: int, block_size: int = BLOCK_SIZE) -> list[int]:
    if replicas < 1:
        raise ValueError("need at least one replica")
    full, rest = divmod(int(replicas), int(block_size))
    return [block_size] * full + ([rest] if rest else [])


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    if isinstance(rng, np.random.Generator):
        return RngStream(int(rng.integers(2**63)))
    raise TypeError(f"cannot derive a replica stream from {type(rng).__name__}")


def map_blocks(task, replicas: int, rng, *, block_size: int = BLOCK_SIZE, parallelism: int = 1) -> list:
    """Run ``task(n, stream, block)`` on each block; results in block order.

    ``task`` must be picklable when ``parallelism > 1``.
    """
    stream = as_stream(rng)
    sizes = block_sizes(replicas, block_size)
    if parallelism <= 1 or len(sizes) == 1:
        return [task(n, stream, k) for k, n in enumerate(sizes)]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(task, n, stream, k) for k, n in enumerate(sizes)]
        return [f.result() for f in futures]


def concat(results: list[dict], axis: int = 0) -> dict:
    """Concatenate per-block dicts of per-replica arrays along the replica axis."""
    keys = results[0].keys()
    return {k: np.concatenate([r[k] for r in results], axis=axis) for k in keys}
