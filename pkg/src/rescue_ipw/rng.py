"""Seeded random streams.

Every stream is a Philox (counter-based) generator keyed by a root seed and
an optional tuple of integer stream indices, so replicate ``k`` of a study
draws the same numbers whether it runs first, last, or on another worker.
"""

import os

import numpy as np

SEED_ENV = "RESCUE_IPW_SEED"


def default_seed(fallback=0):
    """Seed from the ``RESCUE_IPW_SEED`` environment variable, if set."""
    value = os.environ.get(SEED_ENV)
    if value is None or value.strip() == "":
        return fallback
    return int(value)


def stream(seed, *index):
    """Return an independent generator for ``(seed, *index)``.

    A ``numpy.random.Generator`` passed as ``seed`` is returned unchanged so
    callers can thread an existing stream through.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))
