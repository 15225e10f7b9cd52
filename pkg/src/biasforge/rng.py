"""Seed derivation and generator construction.

All randomness in the package flows through :func:`make_rng`, which builds a
NumPy ``Generator`` backed by the Philox-4x64 counter-based bit generator.
Independent streams are obtained by hashing a tuple of keys (master seed,
scenario index, replicate index, ...) into a fresh 64-bit seed with BLAKE2b,
so a stream never depends on how many draws another stream consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(*keys: object) -> int:
    """Hash ``keys`` into an unsigned 64-bit seed.

    Keys are rendered with ``repr`` and joined with a unit separator, so
    ``derive_seed(1, "H1", 0)`` and ``derive_seed(1, "H1", 1)`` are unrelated.
    """
    payload = "\x1f".join(repr(k) for k in keys).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int) -> np.random.Generator:
    if not 0 <= int(seed) <= MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(int(seed)))
