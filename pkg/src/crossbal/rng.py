"""Deterministic random-number plumbing.

All randomness in the package flows through the Philox4x64 counter-based
generator keyed by a 64-bit seed. Child seeds are derived as

    child = hash64(master, purpose_tag, index)

where ``hash64`` is the SplitMix64 finalizer applied to the master seed,
an FNV-1a hash of the purpose tag, and the index, mixed in that order.
Because every constant below is pinned, any re-implementation that follows
this recipe reproduces the exact streams.

Purpose tags in use:

==============  =====================================================
``rep``         one Monte Carlo repetition of a simulation
``dgp``         dataset generation inside a repetition
``fold-split``  random fold assignment within treatment groups
``bootstrap``   one bootstrap resample
``forest-tree`` per-tree seed for random forests
``cv-folds``    cross-validation fold assignment in penalized fits
``noise``       outcome noise draws
``calibration`` Monte Carlo calibration of DGP constants
``eps-ref``     reference sample for approximation-error diagnostics
``learner``     any stochastic model fit (forests, CV shuffles)
==============  =====================================================
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def hash64(master: int, tag: str, index: int = 0) -> int:
    """Derive a 64-bit child seed from (master, purpose tag, index)."""
    h = _splitmix64(master & MASK64)
    h = _splitmix64(h ^ _fnv1a(tag.encode("utf-8")))
    h = _splitmix64(h ^ (index & MASK64))
    return h


def generator(seed: int) -> np.random.Generator:
    """Philox generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=seed & MASK64))


def child_generator(master: int, tag: str, index: int = 0) -> np.random.Generator:
    """Generator for a derived stream; see module docstring for tags."""
    return generator(hash64(master, tag, index))


def sklearn_seed(master: int, tag: str, index: int = 0) -> int:
    """32-bit seed for libraries that cannot take a 64-bit key."""
    return hash64(master, tag, index) & 0x7FFFFFFF
