"""Deterministic seed derivation.

Every random draw in the package flows from one master seed. Sub-streams are
derived by hashing the master seed together with a tag path, so adding a new
consumer never shifts the draws of an existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *tags) -> int:
    """Derive a child seed from ``master`` and a path of string/int tags."""
    h = hashlib.sha256()
    h.update(repr(int(master)).encode("ascii"))
    for tag in tags:
        h.update(b"/")
        h.update(repr(tag).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(master: int, *tags) -> np.random.Generator:
    """A fresh Generator seeded from ``derive_seed(master, *tags)``."""
    return np.random.default_rng(derive_seed(master, *tags))
