"""Named, order-independent random streams derived from one master seed."""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Generator for sub-stream ``name`` (optionally indexed by ``keys``).

    Distinct names or keys give statistically independent streams, so e.g.
    baseline trial 7 draws the same numbers whether or not trials 0-6 ran.
    """
    if not name:
        raise ValueError("stream name must be non-empty")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _name_key(name), *map(int, keys)])
    return np.random.Generator(np.random.Philox(ss))
