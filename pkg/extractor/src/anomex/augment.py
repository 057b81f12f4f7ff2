"""Mask-consistent image augmentation.

Each augmented output applies a short random chain of geometric
transforms, and the mask, when present, goes through the exact same
chain. Quarter-turn rotations and axis flips are pure pixel
permutations; small-angle rotation, shear, and corner distortion
interpolate over a reflection-padded canvas, after which masks are
re-binarized at 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ._seed import rng_for
from .config import AUG_KINDS

MAX_ROTATE_DEG = 15.0
MAX_SHEAR = 0.15
DISTORT_FRACTION = 0.08
# reflection margin; must exceed every interpolating op's reach
_PAD_FRACTION = 0.25


def _pad_reflect(arr: np.ndarray) -> tuple[np.ndarray, int, int]:
    h, w = arr.shape[:2]
    py = int(round(h * _PAD_FRACTION))
    px = int(round(w * _PAD_FRACTION))
    pad = [(py, py), (px, px)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, mode="reflect"), py, px


def _warp(arr: np.ndarray, op: "Op", binary: bool) -> np.ndarray:
    """Apply an interpolating transform identically to image or mask."""
    h, w = arr.shape[:2]
    if binary:
        work = arr.astype(np.float32)
    else:
        work = arr
    padded, py, px = _pad_reflect(work)
    mode = "F" if binary else "RGB"
    img = Image.fromarray(padded, mode=mode)
    if op.kind == "rotate":
        img = img.rotate(op.angle, resample=Image.BILINEAR)
        out = np.asarray(img)[py : py + h, px : px + w]
    elif op.kind == "skew":
        # output (x, y) samples input (x + shear * (y - cy), y)
        cy = padded.shape[0] / 2.0
        img = img.transform(
            img.size,
            Image.AFFINE,
            (1.0, op.shear, -op.shear * cy, 0.0, 1.0, 0.0),
            resample=Image.BILINEAR,
        )
        out = np.asarray(img)[py : py + h, px : px + w]
    elif op.kind == "distort":
        d = op.offsets
        # input quad corners NW, SW, SE, NE on the padded canvas
        quad = (
            px + d[0], py + d[1],
            px + d[2], py + h + d[3],
            px + w + d[4], py + h + d[5],
            px + w + d[6], py + d[7],
        )
        img = img.transform((w, h), Image.QUAD, quad, resample=Image.BILINEAR)
        out = np.asarray(img)
    else:
        raise ValueError(f"not an interpolating op: {op.kind!r}")
    if binary:
        return out >= 0.5
    return out


@dataclass(frozen=True)
class Op:
    """One geometric transform, applicable to images and masks alike."""

    kind: str
    k: int = 0
    axis: str = ""
    angle: float = 0.0
    shear: float = 0.0
    offsets: tuple[float, ...] = ()

    def describe(self) -> str:
        if self.kind == "rot90":
            return f"rot90:k={self.k}"
        if self.kind == "flip":
            return f"flip:axis={self.axis}"
        if self.kind == "rotate":
            return f"rotate:angle={self.angle:.4f}"
        if self.kind == "skew":
            return f"skew:shear={self.shear:.4f}"
        return "distort:offsets=" + ",".join(f"{v:.2f}" for v in self.offsets)

    def apply_image(self, image: np.ndarray) -> np.ndarray:
        if self.kind == "rot90":
            return np.rot90(image, self.k, axes=(0, 1)).copy()
        if self.kind == "flip":
            return np.flip(image, axis=1 if self.axis == "h" else 0).copy()
        return _warp(image, self, binary=False)

    def apply_mask(self, mask: np.ndarray) -> np.ndarray:
        bits = np.asarray(mask).astype(bool)
        if self.kind == "rot90":
            return np.rot90(bits, self.k, axes=(0, 1)).copy()
        if self.kind == "flip":
            return np.flip(bits, axis=1 if self.axis == "h" else 0).copy()
        return _warp(bits, self, binary=True)


@dataclass(frozen=True)
class AugmentedSample:
    """One augmentation output with its recorded transform chain."""

    image: np.ndarray
    mask: np.ndarray | None
    chain: tuple[str, ...]
    ops: tuple[Op, ...] = field(repr=False, default=())


def sample_chain(
    rng: np.random.Generator, kinds: tuple[str, ...], side: int
) -> tuple[Op, ...]:
    """Random chain of one to three transforms drawn from kinds."""
    ops = []
    for _ in range(int(rng.integers(1, 4))):
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "rot90":
            ops.append(Op("rot90", k=int(rng.integers(1, 4))))
        elif kind == "flip":
            ops.append(Op("flip", axis="hv"[int(rng.integers(2))]))
        elif kind == "rotate":
            ops.append(
                Op("rotate", angle=float(rng.uniform(-MAX_ROTATE_DEG, MAX_ROTATE_DEG)))
            )
        elif kind == "skew":
            ops.append(Op("skew", shear=float(rng.uniform(-MAX_SHEAR, MAX_SHEAR))))
        elif kind == "distort":
            mag = DISTORT_FRACTION * side
            ops.append(
                Op("distort", offsets=tuple(float(v) for v in rng.uniform(-mag, mag, 8)))
            )
        else:
            raise ValueError(f"unknown augmentation kind {kind!r}")
    return tuple(ops)


def augment(
    image: np.ndarray,
    mask: np.ndarray | None,
    m: int,
    seed: int,
    kinds: tuple[str, ...] = AUG_KINDS,
) -> list[AugmentedSample]:
    """m augmented copies of an image, mask transformed identically.

    Deterministic given the seed; output i records the chain applied.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {img.shape} {img.dtype}")
    if m < 1:
        raise ValueError(f"augmentation count must be at least 1, got {m}")
    bits = None
    if mask is not None:
        bits = np.asarray(mask).astype(bool)
        if bits.shape != img.shape[:2]:
            raise ValueError(
                f"mask shape {bits.shape} does not match image {img.shape[:2]}"
            )
    side = min(img.shape[:2])
    samples = []
    for i in range(m):
        rng = rng_for(f"augment\x1f{seed}\x1f{i}")
        ops = sample_chain(rng, tuple(kinds), side)
        out_img = img
        out_mask = bits
        for op in ops:
            out_img = op.apply_image(out_img)
            if out_mask is not None:
                out_mask = op.apply_mask(out_mask)
        samples.append(
            AugmentedSample(
                image=out_img,
                mask=out_mask,
                chain=tuple(op.describe() for op in ops),
                ops=ops,
            )
        )
    return samples
