"""Deterministic seed derivation.

Every random stream in dwlab is derived from one top-level seed plus a
component label and integer/str indices, hashed with BLAKE2b. Changing the
order in which work is executed never changes a derived seed.
"""

import hashlib

MASK64 = (1 << 64) - 1


def derive_seed(seed: int, label: str, *indices) -> int:
    """Return a 64-bit seed for the stream ``(seed, label, *indices)``.

    >>> derive_seed(0, "math", 2, 3, 0) == derive_seed(0, "math", 2, 3, 0)
    True
    """
    parts = [str(int(seed) & MASK64), label, *(str(i) for i in indices)]
    digest = hashlib.blake2b("\x1f".join(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
