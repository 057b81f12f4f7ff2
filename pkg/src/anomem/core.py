"""Dense vector primitives and the seeded randomness contract.

All similarity math in this package runs in float64 regardless of how
embeddings are stored on disk (float32). Randomness everywhere flows
through RngStream so that every draw is a pure function of a 64-bit
seed and a consumer label.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ZeroVectorError

ZERO_NORM_EPS = 1e-12


def normalize(v: np.ndarray) -> np.ndarray:
    """Return v scaled to unit L2 norm as float64.

    Raises:
        ZeroVectorError: if the norm of v is below 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-d vector, got shape {v.shape}")
    norm = float(np.linalg.norm(v))
    if norm < ZERO_NORM_EPS:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm!r}")
    return v / norm


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Unit-normalize each row of a 2-d array, returning float64.

    Raises:
        ZeroVectorError: if any row has norm below 1e-12.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-d array, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1)
    if norms.size and float(norms.min()) < ZERO_NORM_EPS:
        bad = int(np.argmin(norms))
        raise ZeroVectorError(f"row {bad} has norm {float(norms[bad])!r}")
    return m / norms[:, None]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two unit vectors, clamped to [-1, 1].

    Callers are responsible for passing unit-normalized inputs; only the
    dimensions are checked here.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatchError(f"incompatible shapes {u.shape} and {v.shape}")
    return min(1.0, max(-1.0, float(np.dot(u, v))))


@dataclass(frozen=True)
class RngStream:
    """Named, seedable source of deterministic randomness.

    The generator algorithm is fixed to PCG64 for the whole artifact.
    The PCG64 state is seeded from SHA-256(seed, label), so two streams
    with equal (seed, label) produce byte-identical draw sequences on
    every platform, and distinct labels give independent streams.
    """

    seed: int
    label: str

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        digest = hashlib.sha256(
            f"{self.seed}\x1f{self.label}".encode("utf-8")
        ).digest()
        entropy = int.from_bytes(digest, "little")
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Shorthand for RngStream(seed, label).generator()."""
    return RngStream(seed, label).generator()
