"""Named, seeded random streams.

Every source of randomness in the package derives from one root seed plus a
stream name, so individual components (data generation, parameter init,
shuffling, deletion draws) are independently reproducible across platforms.
PCG64 is fixed as the bit generator.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _stable_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Generator for the sub-stream `name` of `root_seed`."""
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(_stable_key(name),))
    return np.random.Generator(np.random.PCG64(seq))
