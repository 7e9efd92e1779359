"""Seeded, splittable, counter-based random streams.

All sampling goes through ``numpy.random.Generator`` backed by Philox; no
global state is touched anywhere in the package.
"""
import numpy as np


def make_rng(seed):
    """Generator for ``seed`` (an int, a ``SeedSequence`` or an existing Generator)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def split(seed, n):
    """``n`` independent child generators derived deterministically from ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return [make_rng(child) for child in ss.spawn(n)]
