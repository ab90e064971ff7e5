"""Seed derivation and random-number generation.

All randomness in this package flows from 64-bit unsigned seeds through two
documented primitives:

* ``derive_seed(master, *indices)`` -- a splitmix64 mix of the master seed
  and any number of integer indices (run number, fold number, ...).  The mix
  is pure integer arithmetic, so derived seeds are identical on every
  platform.
* ``make_rng(seed)`` -- a ``numpy.random.Generator`` backed by the Philox
  counter-based bit generator keyed with the seed.  Philox is splittable,
  platform-independent, and produces the same stream for the same key
  everywhere.

Training loops draw one value per iteration via ``rng.integers(n)`` so a
trace can be reproduced from (seed, n) alone.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One splitmix64 step: returns the mixed output for ``state + golden``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(master: int, *indices: int) -> int:
    """Mix a master seed with integer indices into a new 64-bit seed.

    Each index is folded in with one splitmix64 step, so
    ``derive_seed(s, 1, 2) != derive_seed(s, 2, 1)`` and collisions between
    (run, fold) combinations are as unlikely as the mixer allows.
    """
    state = master & _MASK64
    for ix in indices:
        state = splitmix64(state ^ (ix & _MASK64))
    return state


def make_rng(seed: int) -> np.random.Generator:
    """Philox-keyed generator; the one PRNG used everywhere in this package."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))
