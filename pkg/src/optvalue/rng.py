"""Seeded random streams.

Every stream is a Philox (counter-based) generator keyed by a tuple of
non-negative integers, e.g. ``(seed, replicate, purpose)``, so concurrent
replicates never share state and results do not depend on scheduling.
"""

import numpy as np

# purpose ids for harness streams
DATA = 0
ONLINE = 1
CLASSICAL = 2
BOOTSTRAP = 3
PERMUTATION = 4


def stream(*key) -> np.random.Generator:
    """Generator for the stream named by ``key`` (ints, or a single Generator)."""
    if len(key) == 1 and isinstance(key[0], np.random.Generator):
        return key[0]
    flat = []
    for k in key:
        if isinstance(k, (tuple, list)):
            flat.extend(int(x) for x in k)
        else:
            flat.append(int(k))
    if any(k < 0 for k in flat):
        raise ValueError(f"stream keys must be non-negative, got {flat}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(flat)))


def as_key(seed) -> tuple:
    """Normalize an int or tuple seed into a key tuple."""
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)
