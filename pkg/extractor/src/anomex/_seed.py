"""Deterministic RNG streams from string labels."""

from __future__ import annotations

import hashlib

import numpy as np


def rng_for(label: str) -> np.random.Generator:
    """Independent generator derived from a label; stable across runs."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
