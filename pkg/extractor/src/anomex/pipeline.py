"""Image loading and bundle extraction.

Images of any size and aspect ratio are resized to the configured
square input resolution before encoding; the bundle manifest records
that working geometry. Masks follow the same resize with bilinear
interpolation and are re-binarized at 0.5.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .aeb import GridSpec, write_bundle_dir, write_mask_tensor
from .config import ExtractorConfig
from .errors import ExtractorError
from .windows import plan_windows, pool_windows


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file as an (H, W, 3) uint8 RGB array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise ExtractorError(f"cannot read image {path}: {exc}") from exc


def load_mask(path: str | Path) -> np.ndarray:
    """Read a mask image; any nonzero pixel counts as anomalous."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L")) > 0
    except (OSError, UnidentifiedImageError) as exc:
        raise ExtractorError(f"cannot read mask {path}: {exc}") from exc


def resize_image(image: np.ndarray, resolution: int) -> np.ndarray:
    arr = np.asarray(image)
    if arr.shape[:2] == (resolution, resolution):
        return arr
    img = Image.fromarray(arr, mode="RGB")
    return np.asarray(img.resize((resolution, resolution), Image.BILINEAR))


def resize_mask(mask: np.ndarray, resolution: int) -> np.ndarray:
    bits = np.asarray(mask).astype(bool)
    if bits.shape == (resolution, resolution):
        return bits
    img = Image.fromarray(bits.astype(np.float32), mode="F")
    out = np.asarray(img.resize((resolution, resolution), Image.BILINEAR))
    return out >= 0.5


def extract_bundle(
    image: np.ndarray,
    *,
    image_id: str,
    class_name: str,
    config: ExtractorConfig,
    encoder,
    out_dir: str | Path,
    label: int | None = None,
) -> Path:
    """Encode one image and write its bundle directory.

    Returns the bundle path. The emitted manifest satisfies the
    interchange contract: strictly increasing scales, windows inside
    the image bounds, unit embeddings, one grid per configured scale.
    """
    work = resize_image(image, config.input_resolution)
    tokens, global_vec = encoder.encode_image(work)
    grids = []
    for scale in config.scales:
        plan = plan_windows(config, scale)
        pooled = pool_windows(tokens, global_vec, plan, config.aggregation)
        grids.append(
            GridSpec(
                scale_px=plan.scale_px,
                stride_y=plan.stride_y,
                stride_x=plan.stride_x,
                offset_y=plan.offset_y,
                offset_x=plan.offset_x,
                embeddings=pooled,
            )
        )
    return write_bundle_dir(
        out_dir,
        image_id=image_id,
        class_name=class_name,
        image_width=config.input_resolution,
        image_height=config.input_resolution,
        global_embedding=global_vec,
        grids=grids,
        label=label,
    )


def extract_mask(mask: np.ndarray, config: ExtractorConfig, out_path: str | Path) -> Path:
    """Resize a pixel annotation to the working resolution and write it."""
    bits = resize_mask(mask, config.input_resolution)
    write_mask_tensor(out_path, bits)
    return Path(out_path)
