"""Deterministic seed derivation for parallel, reproducible runs."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, *parts) -> int:
    """Mix a base seed with arbitrary labels/counters into a 63-bit seed.

    Hash-based so the result does not depend on platform word size or on
    the order in which other streams were consumed.
    """
    h = hashlib.sha256()
    h.update(str(int(base_seed)).encode())
    for part in parts:
        h.update(b"|")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_rng(base_seed: int, *parts) -> np.random.Generator:
    """Independent generator for the (base_seed, *parts) coordinate."""
    return np.random.default_rng(derive_seed(base_seed, *parts))
