"""Image and text encoders behind a minimal common interface.

An encoder turns an RGB image into a grid of unit patch tokens plus a
unit global vector, and turns a prompt string into a unit text vector
in the same space. The toy encoder is a fixed random projection of raw
pixels: fast, dependency-free, and bit-deterministic, which is what the
test suite and synthetic pipelines need. The clip encoder wraps a real
pretrained vision-language model when its dependencies and weights are
installed, and reports itself unavailable otherwise.
"""

from __future__ import annotations

import numpy as np

from ._seed import rng_for
from .config import ExtractorConfig
from .errors import EncoderUnavailable


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


class ToyEncoder:
    """Deterministic random-projection encoder over raw pixel patches.

    Each patch of patch_size x patch_size RGB pixels, scaled to [0, 1]
    and extended with a constant bias channel, is projected through one
    fixed Gaussian matrix drawn from the seed. The bias keeps uniform
    patches away from the zero vector.
    """

    def __init__(self, dim: int, patch_size: int, seed: int) -> None:
        self.dim = int(dim)
        self.patch_size = int(patch_size)
        self.seed = int(seed)
        n_features = 3 * self.patch_size * self.patch_size + 1
        rng = rng_for(f"toy-image\x1f{self.seed}\x1f{self.dim}\x1f{self.patch_size}")
        self._projection = rng.standard_normal((n_features, self.dim))

    def encode_image(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Encode an (H, W, 3) uint8 image.

        Returns (tokens, global_vec): tokens is (gh, gw, dim) float32
        with unit rows, global_vec is the normalized token mean. H and
        W must be multiples of patch_size.
        """
        arr = np.asarray(image)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ValueError(f"expected (H, W, 3) uint8 image, got {arr.shape} {arr.dtype}")
        h, w = arr.shape[:2]
        p = self.patch_size
        if h % p or w % p:
            raise ValueError(f"image {h}x{w} is not a multiple of patch size {p}")
        gh, gw = h // p, w // p
        # (gh, gw, p, p, 3) patch blocks, flattened per patch
        blocks = arr.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4)
        flat = blocks.reshape(gh * gw, 3 * p * p).astype(np.float64) / 255.0
        feats = np.concatenate([flat, np.ones((gh * gw, 1))], axis=1)
        tokens = _unit_rows(feats @ self._projection)
        global_vec = _unit_rows(tokens.mean(axis=0)[None, :])[0]
        return (
            tokens.reshape(gh, gw, self.dim).astype(np.float32),
            global_vec.astype(np.float32),
        )

    def encode_text(self, prompt: str) -> np.ndarray:
        """Unit vector derived deterministically from the prompt text."""
        rng = rng_for(f"toy-text\x1f{self.seed}\x1f{self.dim}\x1f{prompt}")
        vec = _unit_rows(rng.standard_normal(self.dim)[None, :])[0]
        return vec.astype(np.float32)


class ClipEncoder:
    """Pretrained vision-language backend; optional dependency."""

    def __init__(self, dim: int, patch_size: int, seed: int) -> None:
        try:
            import torch  # noqa: F401
            import transformers  # noqa: F401
        except ImportError as exc:
            raise EncoderUnavailable(
                "the clip encoder needs torch and transformers installed "
                "along with downloaded model weights; install the package's "
                "[clip] extra or use the toy encoder"
            ) from exc
        raise EncoderUnavailable(
            "no pretrained weights are bundled; point a custom encoder at "
            "a local checkpoint or use the toy encoder"
        )


_ENCODERS = {"toy": ToyEncoder, "clip": ClipEncoder}


def get_encoder(config: ExtractorConfig):
    """Instantiate the encoder named by the config."""
    cls = _ENCODERS.get(config.encoder)
    if cls is None:
        raise EncoderUnavailable(
            f"unknown encoder {config.encoder!r}; available: {sorted(_ENCODERS)}"
        )
    return cls(dim=config.dim, patch_size=config.patch_size, seed=config.seed)
