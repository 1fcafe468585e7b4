"""Seeded random streams.

Algorithm: numpy ``PCG64`` bit generator seeded through ``SeedSequence``.
The stream for key ``(tag, index)`` is ``SeedSequence(entropy=master_seed,
spawn_key=(tag, index))``; distinct keys give distinct seed sequences, and
``SeedSequence`` hashing makes the derived states statistically independent.
The result is the same on every platform numpy supports.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ALGORITHM = "numpy.PCG64/SeedSequence(entropy=master_seed, spawn_key=(tag, index))"

# stream tags; fixed so that seeds stay portable between versions
TAG_FIELD = 0
TAG_WALK = 1
TAG_TEST = 2
TAG_MISC = 3


@dataclass(frozen=True)
class RngSpec:
    master_seed: int = 20240601

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @property
    def algorithm(self) -> str:
        return ALGORITHM

    def generator(self, index: int = 0, tag: int = TAG_FIELD) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.master_seed),
                                    spawn_key=(int(tag), int(index)))
        return np.random.Generator(np.random.PCG64(ss))

    def derived_seed(self, index: int = 0, tag: int = TAG_FIELD) -> int:
        """64-bit integer summarizing the stream, recorded in provenance."""
        ss = np.random.SeedSequence(entropy=int(self.master_seed),
                                    spawn_key=(int(tag), int(index)))
        return int(ss.generate_state(1, dtype=np.uint64)[0])
