"""Seeded, splittable random streams.

Every chain, replicate and generator call gets its own ``numpy.random.Generator``
derived from a master seed through ``SeedSequence.spawn``. The spawn key of a
stream identifies it uniquely, so it is recorded in outputs and manifests.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def make_rng(seed: int | np.random.SeedSequence | None) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def substream(seed: int, *path: int) -> np.random.SeedSequence:
    """Return the seed sequence addressed by ``path`` below ``seed``.

    ``substream(s, 3, 1)`` is the second child of the fourth child of the master
    sequence. Addressing by path (rather than spawning incrementally) keeps the
    mapping independent of the order in which jobs are launched.
    """
    return np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path))


def stream(seed: int, *path: int) -> np.random.Generator:
    return make_rng(substream(seed, *path))


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split ``n`` independent child generators off an existing generator."""
    ss = rng.bit_generator.seed_seq
    return [make_rng(child) for child in ss.spawn(n)]


def spawn_key(ss: np.random.SeedSequence) -> list[int]:
    return [int(k) for k in ss.spawn_key]


def describe(seed: int, paths: Sequence[Sequence[int]]) -> dict:
    """Manifest-friendly description of a set of substreams."""
    return {"master_seed": int(seed), "substreams": [list(map(int, p)) for p in paths]}
