"""Window geometry over the token grid and per-window aggregation.

Windows slide densely: one window start per token, so the pixel stride
equals the patch size and a window of k x k tokens yields a
(grid - k + 1) squared layout. Aggregation combines the unit tokens
inside each window into one unit embedding, either by plain mean
pooling or by attention weights derived from each token's similarity
to the global vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExtractorConfig
from .errors import UnsupportedResolution

# contrast factor for the attention softmax; cosine gaps are small so
# raw similarities would give near-uniform weights
ATTENTION_SHARPNESS = 10.0


@dataclass(frozen=True)
class WindowPlan:
    """Pixel-space layout of one scale's windows."""

    scale_px: int
    tokens_per_side: int
    rows: int
    cols: int
    stride_y: int
    stride_x: int
    offset_y: int = 0
    offset_x: int = 0


def plan_windows(config: ExtractorConfig, scale_px: int) -> WindowPlan:
    """Dense window layout for one scale."""
    patch = config.patch_size
    if scale_px % patch != 0:
        raise UnsupportedResolution(
            f"scale {scale_px} is not a multiple of patch size {patch}"
        )
    k = scale_px // patch
    grid = config.token_grid
    if k > grid:
        raise UnsupportedResolution(
            f"scale {scale_px} needs {k} tokens per side, grid has {grid}"
        )
    n = grid - k + 1
    return WindowPlan(
        scale_px=scale_px,
        tokens_per_side=k,
        rows=n,
        cols=n,
        stride_y=patch,
        stride_x=patch,
    )


def _window_views(tokens: np.ndarray, k: int) -> np.ndarray:
    """(rows, cols, k*k, dim) view of all k x k token windows."""
    gh, gw, dim = tokens.shape
    windows = np.lib.stride_tricks.sliding_window_view(tokens, (k, k), axis=(0, 1))
    # sliding_window_view yields (rows, cols, dim, k, k)
    return windows.transpose(0, 1, 3, 4, 2).reshape(gh - k + 1, gw - k + 1, k * k, dim)


def _unit(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def pool_windows(
    tokens: np.ndarray,
    global_vec: np.ndarray,
    plan: WindowPlan,
    aggregation: str,
) -> np.ndarray:
    """Aggregate unit tokens into one unit embedding per window.

    tokens is (gh, gw, dim); the result is (rows, cols, dim) float32.
    "mean" averages the tokens in each window. "attention" weights them
    by a softmax over their similarity to the global vector, so tokens
    that look like the image as a whole dominate.
    """
    views = _window_views(np.asarray(tokens, dtype=np.float64), plan.tokens_per_side)
    if aggregation == "mean":
        pooled = views.mean(axis=2)
    elif aggregation == "attention":
        logits = ATTENTION_SHARPNESS * (views @ np.asarray(global_vec, dtype=np.float64))
        logits -= logits.max(axis=2, keepdims=True)
        weights = np.exp(logits)
        weights /= weights.sum(axis=2, keepdims=True)
        pooled = (weights[..., None] * views).sum(axis=2)
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    return _unit(pooled).astype(np.float32)
