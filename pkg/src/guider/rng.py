"""
Seed splitting.

Every consumer of randomness derives its own generator from the single
64-bit run seed: ``sub_seed = blake2b(f"{seed}:{name}")[:8]`` read as a
little-endian unsigned integer, fed to numpy's PCG64 ``default_rng``.
Adding a consumer therefore never shifts another consumer's stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def sub_seed(seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{int(seed) & SEED_MASK}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def module_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(sub_seed(seed, name))
