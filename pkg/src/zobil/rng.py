"""Counter-based random substreams.

Every random draw in the library comes from a substream addressed by
(master seed, *path).  Substreams are independent of each other and of the
order in which they are created, so batch evaluations can be parallelised
or reordered without changing any result.
"""

from dataclasses import dataclass

import numpy as np


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream addressed by (seed, *path)."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class NoiseSample:
    """Token identifying one realization of the oracle noise xi.

    The same token always yields the same realization; oracles derive
    whatever randomness they need (data sample, measurement noise, ...)
    from ``rng()``.
    """

    seed: int
    path: tuple

    def rng(self) -> np.random.Generator:
        return substream(self.seed, *self.path)
