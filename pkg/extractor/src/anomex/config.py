"""Extractor configuration and validation."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UnsupportedResolution

AGGREGATIONS = ("mean", "attention")
AUG_KINDS = ("rot90", "flip", "rotate", "skew", "distort")

DEFAULT_RESOLUTION = 128
DEFAULT_PATCH = 8
DEFAULT_SCALES = (16, 32)
DEFAULT_DIM = 64


@dataclass(frozen=True)
class ExtractorConfig:
    """Everything that shapes extraction output.

    The scale list must match whatever the downstream scoring run is
    configured with; bundles only carry the scales extracted here.
    """

    encoder: str = "toy"
    input_resolution: int = DEFAULT_RESOLUTION
    patch_size: int = DEFAULT_PATCH
    scales: tuple[int, ...] = DEFAULT_SCALES
    aggregation: str = "mean"
    template_set: str = "default"
    n_augmentations: int = 5
    aug_kinds: tuple[str, ...] = AUG_KINDS
    seed: int = 0
    dim: int = DEFAULT_DIM

    def __post_init__(self) -> None:
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        object.__setattr__(self, "aug_kinds", tuple(self.aug_kinds))
        res, patch = self.input_resolution, self.patch_size
        if patch < 1:
            raise UnsupportedResolution(f"patch size must be positive, got {patch}")
        if res < patch:
            raise UnsupportedResolution(
                f"input resolution {res} is smaller than patch size {patch}"
            )
        if res % patch != 0:
            raise UnsupportedResolution(
                f"input resolution {res} is not a multiple of patch size {patch}"
            )
        if not self.scales:
            raise UnsupportedResolution("at least one scale is required")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise UnsupportedResolution(
                f"scales must be strictly increasing, got {self.scales}"
            )
        for s in self.scales:
            if s % patch != 0:
                raise UnsupportedResolution(
                    f"scale {s} is not a multiple of patch size {patch}"
                )
            if s > res:
                raise UnsupportedResolution(
                    f"scale {s} exceeds input resolution {res}"
                )
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(
                f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}"
            )
        if self.n_augmentations < 0:
            raise ValueError(
                f"augmentation count must be nonnegative, got {self.n_augmentations}"
            )
        if not self.aug_kinds:
            raise ValueError("at least one augmentation kind is required")
        unknown = [k for k in self.aug_kinds if k not in AUG_KINDS]
        if unknown:
            raise ValueError(f"unknown augmentation kinds {unknown}; valid: {AUG_KINDS}")
        if self.dim < 1:
            raise ValueError(f"embedding dim must be positive, got {self.dim}")

    @property
    def token_grid(self) -> int:
        """Tokens per image side."""
        return self.input_resolution // self.patch_size
