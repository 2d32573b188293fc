"""Reproducible random streams and deterministic sharded execution.

Every stream is a Philox (counter-based) generator keyed by a root seed and
an integer path, so results never depend on how shards are scheduled.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Sequence

import numpy as np

RandomStream = np.random.Generator


def stream(root_seed: int, *key: int) -> np.random.Generator:
    """Return the generator for ``(root_seed, *key)``."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng: Any) -> np.random.Generator:
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return stream(0)
    return stream(int(rng))


def child_streams(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """Deterministic children of ``rng`` (one per shard)."""
    return list(rng.spawn(count))


def shard_sizes(total: int, shard_size: int) -> list[int]:
    """Split ``total`` items into fixed-size shards (the last may be shorter)."""
    if total <= 0:
        return []
    full, rest = divmod(int(total), int(shard_size))
    return [shard_size] * full + ([rest] if rest else [])


def run_shards(
    fn: Callable[..., Any],
    sizes: Sequence[int],
    rng: np.random.Generator,
    args: tuple = (),
    workers: int = 1,
) -> list[Any]:
    """Run ``fn(size, shard_rng, *args)`` for each shard, results in shard order.

    The shard streams are derived from ``rng`` before any work starts, so the
    output is identical for every ``workers`` value.
    """
    rngs = child_streams(rng, len(sizes))
    if workers <= 1 or len(sizes) <= 1:
        return [fn(s, r, *args) for s, r in zip(sizes, rngs)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, s, r, *args) for s, r in zip(sizes, rngs)]
        return [f.result() for f in futures]


def run_tasks(
    fn: Callable[..., Any],
    tasks: Sequence[tuple],
    rng: np.random.Generator,
    workers: int = 1,
) -> list[Any]:
    """Run ``fn(task_rng, *task)`` for heterogeneous tasks, results in task order."""
    rngs = child_streams(rng, len(tasks))
    if workers <= 1 or len(tasks) <= 1:
        return [fn(r, *t) for r, t in zip(rngs, tasks)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, r, *t) for r, t in zip(rngs, tasks)]
        return [f.result() for f in futures]
