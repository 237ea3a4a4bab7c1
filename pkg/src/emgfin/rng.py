"""Named, reproducible random streams derived from a single root seed.

Every source of randomness in the toolkit (weight init, shuffling, dropout,
augmentation noise, subsampling, synthetic data) pulls its own generator via
`substream`, so any component can be re-run in isolation and still see the
exact bytes it saw inside a full pipeline run.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _digest(root_seed: int, tags: tuple) -> int:
    text = repr((int(root_seed),) + tuple(tags)).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def substream(root_seed: int, *tags) -> np.random.Generator:
    """Return a PCG64 generator keyed by (root_seed, *tags).

    Tags must be hashable, repr-stable values (strings, ints, tuples).
    """
    return np.random.Generator(np.random.PCG64(_digest(root_seed, tags)))


def substream_seed(root_seed: int, *tags) -> int:
    """The integer seed a substream would be built from (for logging)."""
    return _digest(root_seed, tags)
