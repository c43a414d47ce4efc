"""Named random streams derived from one master seed.

Every consumer of randomness asks for a generator keyed by a purpose plus
coordinates (round, client). Streams never share state, so changing how
one part of the simulator draws numbers cannot perturb another part.
"""

from __future__ import annotations

import numpy as np

DATA = 0
PARTITION = 1
POPULATION = 2
CRASH = 3
BATCH = 4
SELECT = 5
INIT = 6
TIEBREAK = 7
BIAS_MC = 8


def stream(seed: int, purpose: int, *coords: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), *map(int, coords)))
    return np.random.default_rng(ss)
