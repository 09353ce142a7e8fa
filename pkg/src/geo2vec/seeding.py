"""Deterministic RNG streams derived from hashable tokens.

Every stochastic component owns a stream keyed by (base seed, purpose,
per-item tokens), so parallel and serial execution orders produce the
same output and reruns are bit-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np


def spawn_rng(*tokens: object) -> np.random.Generator:
    """Return a Generator seeded from a stable hash of the tokens.

    Tokens are stringified, so ints, strings, and floats are all fine.
    Uses blake2b rather than hash() because the latter is salted per
    process.
    """
    key = "\x1f".join(str(t) for t in tokens).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))
