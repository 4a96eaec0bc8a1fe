"""Seeded random streams.

Every stochastic routine takes an integer seed.  Independent sub-streams
(replicate ``i`` of a run seeded with ``seed``) are derived with
``stream(seed, i)``, which feeds ``(seed, i)`` through numpy's
``SeedSequence`` hash.  Results therefore do not depend on the order in
which replicates are scheduled.
"""

import numpy as np


def stream(seed, *keys):
    """Return a PCG64 generator for the sub-stream ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def child_seed(seed, *keys):
    """Derive a 63-bit integer seed for sub-stream ``(seed, *keys)``."""
    return int(stream(seed, *keys).integers(0, 2**63 - 1))
