"""Reproducible random streams.

All randomness in the package flows through Philox, a counter-based bit
generator whose output is fixed by (key, counter) alone, so results are
identical across platforms and numpy builds.  Named sub-streams are derived
by hashing a master seed together with string/integer labels; distinct
labels give statistically independent streams.
"""

import hashlib

import numpy as np

__all__ = ["derive_key", "derive_seed", "make_rng"]

_LABEL_SEP = b"\x1f"


def derive_key(seed: int, *labels) -> int:
    """Return a 128-bit Philox key from a master seed and stream labels."""
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(16, "little", signed=True))
    for label in labels:
        h.update(str(label).encode("utf-8"))
        h.update(_LABEL_SEP)
    return int.from_bytes(h.digest(), "little")


def derive_seed(seed: int, *labels) -> int:
    """Return a 63-bit sub-seed for APIs that take plain integer seeds."""
    return derive_key(seed, *labels) & 0x7FFFFFFFFFFFFFFF


def make_rng(seed: int, *labels) -> np.random.Generator:
    """Return a Generator on the stream named by ``labels``."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *labels)))
