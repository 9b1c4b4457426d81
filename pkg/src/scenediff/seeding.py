"""Stable seed derivation so nested components get independent RNG streams."""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from structured parts (ints, strings)."""
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)
