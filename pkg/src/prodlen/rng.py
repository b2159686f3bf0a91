"""Counter-based, splittable random streams.

Every stream is a Philox generator keyed by ``(seed, *keys)``.  Keys may be
strings (hashed with BLAKE2b) or non-negative integers, so a stream for
``(seed, "lengths", prompt_id)`` is the same no matter which order prompts
are processed in.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_words(key) -> tuple[int, int]:
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        v = int(key) & _MASK64
    else:
        digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
        v = int.from_bytes(digest, "little")
    return v & 0xFFFFFFFF, v >> 32


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    spawn = []
    for k in keys:
        spawn.extend(_key_words(k))
    return np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(spawn))


def stream(seed: int, *keys) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))


def derive_seed(seed: int, *keys) -> int:
    """Collapse ``(seed, *keys)`` into a fresh 63-bit integer seed."""
    state = seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return (int(state[0]) | (int(state[1]) << 32)) & ((1 << 63) - 1)
