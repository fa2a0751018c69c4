"""Deterministic random streams keyed by (seed, stream).

Each (seed, stream) pair names an independent counter-based stream; a fresh
bit generator is produced per use so replays are exact regardless of what
ran before.  Replicas use stream = replica index, which keeps results
independent of worker scheduling.
"""

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngSpec:
    """Names one reproducible random stream."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & MASK64)
        object.__setattr__(self, "stream", int(self.stream) & MASK64)

    def bit_generator(self):
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Philox(key=key)

    def generator(self):
        return np.random.Generator(self.bit_generator())

    def child(self, stream):
        """Same seed, different stream index."""
        return RngSpec(self.seed, stream)
