"""Synthetic data builders shared across the test suite.

The dataset fixture fabricates a two-class benchmark in embedding
space: each class has a cluster of reference directions plus one
anomalous direction orthogonal to the cluster. Anomalous bundles carry
anomalous-direction patches in a fixed 32x32 corner matching their
mask. With separated=False the anomalous direction never appears in
any bundle, so labels carry no signal.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from anomem import (
    EmbeddingBundle,
    ScaleGrid,
    TextStatePair,
    write_bundle,
    write_text_states,
)

FIXTURE_DIM = 16
FIXTURE_IMG = 64
CORNER = 32  # masked square side in anomalous images


def unit64(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    return unit64(rng.standard_normal(dim))


def perturb(rng: np.random.Generator, v: np.ndarray, eps: float) -> np.ndarray:
    return unit64(np.asarray(v, dtype=np.float64) + eps * rng.standard_normal(len(v)))


def orthogonal_to(rng: np.random.Generator, rows: np.ndarray) -> np.ndarray:
    """A unit vector orthogonal to every row of rows (Gram-Schmidt)."""
    dim = rows.shape[1]
    for _ in range(50):
        v = rng.standard_normal(dim)
        for r in rows:
            v = v - np.dot(v, r) * r
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm
    raise RuntimeError("could not draw an orthogonal direction")


def random_bundle(
    rng: np.random.Generator,
    image_id: str = "b0",
    class_name: str = "c",
    dim: int | None = None,
    n_scales: int | None = None,
    label: int | None = None,
) -> EmbeddingBundle:
    """A structurally random but valid bundle for format tests."""
    dim = dim or int(rng.integers(2, 33))
    n_scales = n_scales or int(rng.integers(1, 4))
    scale_pool = sorted(rng.choice([4, 8, 16, 24, 32, 48], size=n_scales, replace=False))
    grids = []
    for s in scale_pool:
        rows = int(rng.integers(1, 5))
        cols = int(rng.integers(1, 5))
        stride = int(rng.integers(1, s + 1))
        off_y = int(rng.integers(0, 5))
        off_x = int(rng.integers(0, 5))
        emb = rng.standard_normal((rows, cols, dim))
        emb /= np.linalg.norm(emb, axis=2, keepdims=True)
        grids.append(
            ScaleGrid(
                scale_px=int(s),
                stride_y=stride,
                stride_x=stride,
                offset_y=off_y,
                offset_x=off_x,
                embeddings=emb.astype(np.float32),
            )
        )
    return EmbeddingBundle(
        image_id=image_id,
        class_name=class_name,
        image_width=300,
        image_height=300,
        global_embedding=random_unit(rng, dim).astype(np.float32),
        grids=tuple(grids),
        label=label,
    )


# ---------------------------------------------------------------------------
# dataset fixture

# scale 16: 4x4 grid, stride 16; scale 32: 3x3 grid, stride 16 (overlapping)
FIXTURE_LAYOUT = (
    (16, 4, 4, 16),
    (32, 3, 3, 16),
)


def _corner_windows(scale_px: int, rows: int, cols: int, stride: int, theta: float = 0.25):
    """Window indices whose coverage of the corner square clears theta."""
    out = set()
    for i in range(rows):
        for j in range(cols):
            y0, x0 = i * stride, j * stride
            oy = max(0, min(y0 + scale_px, CORNER) - y0)
            ox = max(0, min(x0 + scale_px, CORNER) - x0)
            if oy * ox / (scale_px * scale_px) >= theta:
                out.add((i, j))
    return out


def _fixture_grids(
    rng: np.random.Generator,
    refs: np.ndarray,
    anom_dir: np.ndarray | None,
    eps: float = 0.02,
) -> tuple[ScaleGrid, ...]:
    grids = []
    for scale_px, rows, cols, stride in FIXTURE_LAYOUT:
        anom_cells = _corner_windows(scale_px, rows, cols, stride) if anom_dir is not None else set()
        emb = np.zeros((rows, cols, FIXTURE_DIM), dtype=np.float32)
        for i in range(rows):
            for j in range(cols):
                base = anom_dir if (i, j) in anom_cells else refs[(3 * i + j) % len(refs)]
                cell = perturb(rng, base, eps)
                if anom_dir is not None and (i, j) in anom_cells:
                    assert float(np.dot(cell, anom_dir)) >= 0.99
                emb[i, j] = cell.astype(np.float32)
        grids.append(
            ScaleGrid(scale_px=scale_px, stride_y=stride, stride_x=stride, embeddings=emb)
        )
    return tuple(grids)


def _fixture_bundle(
    rng: np.random.Generator,
    class_name: str,
    image_id: str,
    refs: np.ndarray,
    anom_dir: np.ndarray | None,
    label: int,
) -> EmbeddingBundle:
    mean_ref = unit64(refs.mean(axis=0))
    if anom_dir is not None:
        g = unit64(0.8 * anom_dir + 0.2 * mean_ref)
    else:
        g = mean_ref
    return EmbeddingBundle(
        image_id=image_id,
        class_name=class_name,
        image_width=FIXTURE_IMG,
        image_height=FIXTURE_IMG,
        global_embedding=perturb(rng, g, 0.02).astype(np.float32),
        grids=_fixture_grids(rng, refs, anom_dir),
        label=label,
    )


def corner_mask_png(path: Path) -> None:
    bits = np.zeros((FIXTURE_IMG, FIXTURE_IMG), dtype=np.uint8)
    bits[:CORNER, :CORNER] = 255
    Image.fromarray(bits, mode="L").save(path)


def build_dataset_fixture(
    root: Path,
    classes: tuple[str, ...] = ("alpha", "beta"),
    n_normal: int = 6,
    n_anomalous: int = 6,
    seed: int = 7,
    separated: bool = True,
    with_augs: bool = False,
    n_augs: int = 5,
) -> Path:
    """Write a complete dataset fixture under root; returns the manifest path.

    separated=True plants near-copies of the anomalous direction in
    every anomalous bundle (and aligned text states), so composite mode
    separates the classes perfectly. separated=False produces bundles
    whose content ignores the labels entirely.
    """
    root = Path(root)
    (root / "states").mkdir(parents=True, exist_ok=True)
    manifest: dict = {"classes": {}, "text_states": {}}
    for ci, cls in enumerate(classes):
        rng = np.random.default_rng([seed, ci])
        refs = np.stack([random_unit(rng, FIXTURE_DIM) for _ in range(3)])
        anom_dir = orthogonal_to(rng, refs)
        states = TextStatePair(
            normal=unit64(refs.mean(axis=0)).astype(np.float32),
            anomalous=perturb(rng, anom_dir, 0.01).astype(np.float32),
        )
        states_rel = f"states/{cls}.aeb1"
        write_text_states(states, root / states_rel)
        manifest["text_states"][cls] = states_rel

        mask_rel = f"{cls}/mask.png"
        (root / cls).mkdir(parents=True, exist_ok=True)
        corner_mask_png(root / mask_rel)

        entries = []
        specs = [(f"{cls}-anom-{k:02d}", 1) for k in range(n_anomalous)]
        specs += [(f"{cls}-norm-{k:02d}", 0) for k in range(n_normal)]
        for image_id, label in specs:
            content_dir = anom_dir if (label == 1 and separated) else None
            bundle = _fixture_bundle(rng, cls, image_id, refs, content_dir, label)
            rel = f"{cls}/{image_id}"
            write_bundle(bundle, root / rel)
            entry = {"id": image_id, "bundle_path": rel, "label": label}
            if label == 1:
                entry["mask_path"] = mask_rel
            if with_augs:
                aug_paths = []
                for k in range(n_augs):
                    aug = _fixture_bundle(
                        rng, cls, f"{image_id}-aug{k}", refs, content_dir, label
                    )
                    aug_rel = f"{cls}/augs/{image_id}-aug{k}"
                    write_bundle(aug, root / aug_rel)
                    aug_paths.append(aug_rel)
                entry["aug_paths"] = aug_paths
            entries.append(entry)
        manifest["classes"][cls] = entries
    manifest_path = root / "dataset.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest_path
