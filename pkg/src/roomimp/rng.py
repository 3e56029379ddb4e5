"""Counter-based random streams.

Every random draw in the toolkit comes from a stream addressed by
``(base_seed, purpose, *indices)``.  Streams are mutually independent and a
stream's draws do not depend on which other streams were consumed, so serial
and parallel schedules produce identical sample sets.
"""

import numpy as np

# Purpose tags; part of the on-disk reproducibility contract, do not renumber.
MICS = 1
NOISE = 2
PRIOR = 3
PRIOR_REF = 4


def stream(base_seed, *path):
    """Return the Generator for the stream addressed by (base_seed, *path)."""
    key = np.random.SeedSequence((int(base_seed),) + tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(key))
