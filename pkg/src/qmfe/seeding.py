"""Deterministic seed derivation.

All randomness flows from a 64-bit master seed through ``numpy``'s
``SeedSequence`` into counter-based Philox generators, so a stream is
fully identified by ``(seed, *keys)`` and independent of scheduling.
"""

from __future__ import annotations

import numpy as np

SEED_MASK = (1 << 64) - 1

# Stream keys for the two random sources inside one protocol run.
PROTOCOL_STREAM = 0
DEVICE_STREAM = 1
# Harness-level draws that are not tied to a single run (sampled theta values).
THETA_STREAM = 2


def _sequence(seed: int, keys) -> np.random.SeedSequence:
    # Keys go into spawn_key, not entropy: SeedSequence([s]) and
    # SeedSequence([s, 0]) hash to the same state.
    return np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(int(k) for k in keys))


def derive_seed(master_seed: int, *keys: int) -> int:
    """Hash ``(master_seed, *keys)`` into a fresh 64-bit seed."""
    lo, hi = _sequence(master_seed, keys).generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(_sequence(seed, keys)))
