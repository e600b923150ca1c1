"""Deterministic seed fan-out.

A single global seed is split into independent per-component seeds by hashing
the seed together with a component label, so any component can be re-run in
isolation and still line up with a full pipeline run.
"""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, label: str) -> int:
    """Derive a 32-bit component seed from a global seed and a label."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")
