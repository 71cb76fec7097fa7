"""Random stream derivation.

Every random draw in the package comes from a Philox (counter-based, 64-bit)
generator keyed by ``(seed, purpose, replica)`` through
:class:`numpy.random.SeedSequence`. Replicas therefore never share state and
results do not depend on the order in which replicas are executed.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

# purpose tags, kept stable so that stored seeds stay meaningful
SIMULATE = 0
PILOT = 1
MAIN = 2
HISTORY = 3
BOOTSTRAP = 4
ALTERNATE = 5

_max_workers = 1


def stream(seed: int, purpose: int = SIMULATE, replica: int = 0, *extra: int) -> np.random.Generator:
    """Return the generator for one ``(seed, purpose, replica)`` triple."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(replica), *map(int, extra)))
    return np.random.Generator(np.random.Philox(ss))


def set_threads(n: int) -> None:
    """Cap the worker count used by :func:`replica_map`."""
    global _max_workers
    _max_workers = max(1, int(n))


def replica_map(fn: Callable[[int], T], n_reps: int, threads: int | None = None) -> list[T]:
    """Evaluate ``fn(r)`` for ``r in range(n_reps)`` and return results in order.

    ``fn`` must draw randomness only from streams derived from ``r`` so the
    output is identical for any thread count.
    """
    workers = _max_workers if threads is None else max(1, threads)
    if workers == 1 or n_reps < 2:
        return [fn(r) for r in range(n_reps)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_reps)))


def chunked(total: int, size: int) -> Sequence[tuple[int, int]]:
    return [(a, min(a + size, total)) for a in range(0, total, size)]


def replica_batches(reps: int, length: int) -> list[tuple[int, int, int]]:
    """Split ``reps`` replicas of a ``length``-step path into ``(batch, start, stop)``.

    Batch ``b`` draws from ``stream(seed, purpose, b)``. The batch size
    depends only on ``length`` so replica ``r`` sees the same uniforms for any
    total replica count.
    """
    size = max(1, min(256, (1 << 20) // max(length, 1)))
    return [(b, a, min(a + size, reps)) for b, a in enumerate(range(0, reps, size))]
