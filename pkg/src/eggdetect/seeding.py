"""Deterministic seed derivation for independent random streams.

Every randomized stage of the pipeline draws from a stream whose seed is a
pure function of a root seed plus string/int context parts, so execution
order (serial, threaded, or process-parallel) cannot change results.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 63) - 1


def derive_seed(*parts: int | str) -> int:
    """Map (root seed, context parts) to a stable 63-bit seed."""
    key = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _MASK


def rng_for(*parts: int | str) -> np.random.Generator:
    """A numpy Generator seeded from the derived stream."""
    return np.random.default_rng(derive_seed(*parts))
