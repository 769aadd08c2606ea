"""Named, order-independent random streams.

Every random quantity in a simulation is drawn from a generator keyed by
``(master seed, purpose, device, round)``. Two runs that share a master
seed therefore see identical channel fades and mini-batches no matter
which scheme they run or in which order devices are visited.
"""
from __future__ import annotations

import numpy as np

TASK = 1
POPULATION = 2
CHANNEL = 3
MINIBATCH = 4
SPARSIFY = 5
STATS = 6
PARTITION = 7


def stream(seed: int, purpose: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), *map(int, key)))
    return np.random.default_rng(ss)
