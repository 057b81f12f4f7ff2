"""Patch memory banks built from pixel-annotated samples.

A bank is a per-scale collection of unit patch embeddings with
provenance. Reference banks hold patches whose windows contain no
annotated pixel; anomalous banks hold patches whose annotated-pixel
coverage clears the threshold theta. Patches in between are excluded
from both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np

from . import bundle_io
from .bundle_io import AnnotationMask, EmbeddingBundle, ScaleGrid
from .errors import (
    DimensionMismatchError,
    EmptyBankError,
    EmptyScaleError,
    FormatError,
    GeometryError,
    IntegrityError,
    NoAnomalousPixelsError,
    NormalizationError,
    ScaleMismatchError,
    StorageError,
)

DEFAULT_THETA = 0.25
DEFAULT_BLOCK = 4096


class PatchLabel(IntEnum):
    NORMAL = 0
    ANOMALOUS = 1
    EXCLUDED = 2


class BankRole(str, Enum):
    REFERENCE = "reference"
    ANOMALOUS = "anomalous"


def assign_patch_labels(
    mask: AnnotationMask, grid: ScaleGrid, theta: float = DEFAULT_THETA
) -> np.ndarray:
    """Label every window of a grid against a pixel mask.

    coverage(i, j) is the fraction of annotated pixels inside window
    (i, j). A window with zero coverage is NORMAL, one with coverage of
    at least theta is ANOMALOUS, anything in between is EXCLUDED.

    Returns an int8 array of shape (rows, cols) with PatchLabel values.

    Raises:
        GeometryError: a window falls outside the mask.
        ValueError: theta outside [0, 1].
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [0, 1], got {theta}")
    h, w = mask.bits.shape
    s = grid.scale_px
    last_y = grid.offset_y + (grid.rows - 1) * grid.stride_y + s
    last_x = grid.offset_x + (grid.cols - 1) * grid.stride_x + s
    if last_y > h or last_x > w:
        raise GeometryError(
            f"scale {s} windows extend to ({last_y}, {last_x}), mask is {h}x{w}"
        )
    # integral image: counts in O(1) per window regardless of overlap
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii[1:, 1:] = mask.bits.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
    y0 = grid.offset_y + np.arange(grid.rows) * grid.stride_y
    x0 = grid.offset_x + np.arange(grid.cols) * grid.stride_x
    y1, x1 = y0 + s, x0 + s
    counts = (
        ii[np.ix_(y1, x1)]
        - ii[np.ix_(y0, x1)]
        - ii[np.ix_(y1, x0)]
        + ii[np.ix_(y0, x0)]
    )
    area = float(s * s)
    coverage = counts / area
    labels = np.full(counts.shape, PatchLabel.EXCLUDED, dtype=np.int8)
    labels[coverage >= theta] = PatchLabel.ANOMALOUS
    labels[counts == 0] = PatchLabel.NORMAL
    return labels


@dataclass
class MemoryBank:
    """Per-scale unit patch embeddings with provenance.

    entries maps scale_px to a (n, dim) float64 array of unit rows;
    provenance maps scale_px to a list of (image_id, row, col) triples
    aligned with the entry rows. A scale may be empty (n = 0) only in
    an anomalous bank.
    """

    role: BankRole
    scales: tuple[int, ...]
    dim: int
    entries: dict[int, np.ndarray] = field(default_factory=dict)
    provenance: dict[int, list[tuple[str, int, int]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.role = BankRole(self.role)
        self.scales = tuple(int(s) for s in self.scales)
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ScaleMismatchError(f"bank scales must be strictly increasing: {self.scales}")
        for s in self.scales:
            arr = np.ascontiguousarray(self.entries.get(s, np.empty((0, self.dim))), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != self.dim:
                raise DimensionMismatchError(
                    f"scale {s} entries must be (n, {self.dim}), got {arr.shape}"
                )
            self.entries[s] = arr
            prov = self.provenance.setdefault(s, [])
            if len(prov) != arr.shape[0]:
                raise IntegrityError(
                    f"scale {s}: {arr.shape[0]} entries but {len(prov)} provenance rows"
                )

    def count(self, scale_px: int) -> int:
        return int(self.entries[scale_px].shape[0])

    def is_empty(self, scale_px: int) -> bool:
        return self.count(scale_px) == 0

    def nonempty_scales(self) -> tuple[int, ...]:
        return tuple(s for s in self.scales if not self.is_empty(s))


def _collect(
    bundles: list[EmbeddingBundle],
    masks: list[AnnotationMask | None],
    theta: float,
    wanted: PatchLabel,
) -> tuple[tuple[int, ...], int, dict[int, list[np.ndarray]], dict[int, list[tuple[str, int, int]]]]:
    if len(bundles) != len(masks):
        raise DimensionMismatchError(
            f"{len(bundles)} bundles but {len(masks)} masks"
        )
    if not bundles:
        raise DimensionMismatchError("at least one bundle is required")
    scales = bundles[0].scales
    dim = bundles[0].dim
    rows: dict[int, list[np.ndarray]] = {s: [] for s in scales}
    prov: dict[int, list[tuple[str, int, int]]] = {s: [] for s in scales}
    for bundle, mask in zip(bundles, masks):
        if bundle.scales != scales:
            raise ScaleMismatchError(
                f"bundle {bundle.image_id} scales {bundle.scales} != {scales}"
            )
        if bundle.dim != dim:
            raise DimensionMismatchError(
                f"bundle {bundle.image_id} dim {bundle.dim} != {dim}"
            )
        if mask is not None and mask.bits.shape != (bundle.image_height, bundle.image_width):
            raise DimensionMismatchError(
                f"mask {mask.bits.shape} does not match bundle {bundle.image_id} "
                f"image {bundle.image_height}x{bundle.image_width}"
            )
        for grid in bundle.grids:
            if mask is None:
                labels = np.full((grid.rows, grid.cols), PatchLabel.NORMAL, dtype=np.int8)
            else:
                labels = assign_patch_labels(mask, grid, theta)
            sel = np.argwhere(labels == wanted)
            if sel.size:
                unit = grid.unit()
                for i, j in sel:
                    rows[grid.scale_px].append(unit[i, j])
                    prov[grid.scale_px].append((bundle.image_id, int(i), int(j)))
    return scales, dim, rows, prov


def build_reference_bank(
    bundles: list[EmbeddingBundle],
    masks: list[AnnotationMask | None] | None = None,
    theta: float = DEFAULT_THETA,
) -> MemoryBank:
    """Build the normal-patch bank. Bundles without a mask count as fully normal.

    Raises:
        EmptyBankError: some scale ends up with no normal patch.
    """
    if masks is None:
        masks = [None] * len(bundles)
    scales, dim, rows, prov = _collect(bundles, masks, theta, PatchLabel.NORMAL)
    entries = {}
    for s in scales:
        if not rows[s]:
            raise EmptyBankError(f"no normal patches at scale {s}")
        entries[s] = np.stack(rows[s])
    return MemoryBank(
        role=BankRole.REFERENCE, scales=scales, dim=dim, entries=entries, provenance=prov
    )


def build_anomalous_bank(
    bundles: list[EmbeddingBundle],
    masks: list[AnnotationMask | None],
    theta: float = DEFAULT_THETA,
) -> MemoryBank:
    """Build the anomalous-patch bank.

    Scales where no patch clears theta stay empty; scoring treats them
    as contributing nothing. All masks empty (or absent) is an error
    because the bank would be vacuous by construction.

    Raises:
        NoAnomalousPixelsError: no mask marks a single anomalous pixel.
    """
    if not any(m is not None and m.count() > 0 for m in masks):
        raise NoAnomalousPixelsError(
            "anomalous bank requested but no mask marks any anomalous pixel"
        )
    scales, dim, rows, prov = _collect(bundles, masks, theta, PatchLabel.ANOMALOUS)
    entries = {s: (np.stack(rows[s]) if rows[s] else np.empty((0, dim))) for s in scales}
    return MemoryBank(
        role=BankRole.ANOMALOUS, scales=scales, dim=dim, entries=entries, provenance=prov
    )


# ---------------------------------------------------------------------------
# exact top-1 search


def top1_batch(
    queries: np.ndarray, entries: np.ndarray, block_size: int = DEFAULT_BLOCK
) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-1 cosine search of unit queries against unit entries.

    Entries are processed in blocks so memory stays bounded. Every
    (query, entry) product is reduced independently over the feature
    axis, so results match a sequential scan bit for bit: identical
    entries score identically (ties resolve to the lowest index),
    appending entries never perturbs existing similarities, and
    batching queries does not change their values.

    Returns (similarities clamped to [-1, 1], argmax indices).
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    entries = np.ascontiguousarray(entries, dtype=np.float64)
    if queries.ndim != 2 or entries.ndim != 2:
        raise DimensionMismatchError("queries and entries must be 2-d")
    if queries.shape[1] != entries.shape[1]:
        raise DimensionMismatchError(
            f"query dim {queries.shape[1]} != entry dim {entries.shape[1]}"
        )
    if block_size < 1:
        raise ValueError(f"block_size must be positive, got {block_size}")
    n = entries.shape[0]
    if n == 0:
        raise EmptyScaleError("search issued against an empty entry set")
    q = queries.shape[0]
    best = np.full(q, -np.inf)
    best_idx = np.zeros(q, dtype=np.int64)
    rows = np.arange(q)
    for start in range(0, n, block_size):
        # BLAS matmul accumulates in a row-position-dependent order, which
        # would let duplicate entries score differently; einsum keeps each
        # pairwise reduction independent of the operand shapes.
        sims = np.einsum(
            "qd,nd->qn", queries, entries[start : start + block_size], optimize=False
        )
        arg = np.argmax(sims, axis=1)
        val = sims[rows, arg]
        better = val > best
        best[better] = val[better]
        best_idx[better] = arg[better] + start
    np.clip(best, -1.0, 1.0, out=best)
    return best, best_idx


def top1_similarity(
    query: np.ndarray,
    bank: MemoryBank,
    scale_px: int,
    block_size: int = DEFAULT_BLOCK,
) -> tuple[float, int]:
    """Best cosine similarity and entry index for one unit query.

    Raises:
        EmptyScaleError: the bank holds no entries at this scale.
    """
    if scale_px not in bank.scales:
        raise ScaleMismatchError(f"bank has no scale {scale_px}")
    if bank.is_empty(scale_px):
        raise EmptyScaleError(f"{bank.role.value} bank is empty at scale {scale_px}")
    query = np.ascontiguousarray(query, dtype=np.float64)
    if query.ndim != 1:
        raise DimensionMismatchError(f"query must be 1-d, got shape {query.shape}")
    sims, idx = top1_batch(query[None, :], bank.entries[scale_px], block_size)
    return float(sims[0]), int(idx[0])


# ---------------------------------------------------------------------------
# bank persistence

_BANK_MANIFEST = "manifest.json"


def save_bank(bank: MemoryBank, path: str | Path) -> None:
    """Write a bank directory: manifest.json plus one float32 tensor per scale."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create bank directory {root}: {exc}") from exc
    manifest = {
        "format": "aeb-bank",
        "version": bundle_io.CONTAINER_VERSION,
        "role": bank.role.value,
        "embedding_dim": bank.dim,
        "scales": [
            {
                "scale_px": s,
                "count": bank.count(s),
                "tensor": f"scale_{s:04d}.aeb1",
            }
            for s in bank.scales
        ],
        "provenance": {
            str(s): [[img, i, j] for img, i, j in bank.provenance[s]] for s in bank.scales
        },
    }
    for s in bank.scales:
        bundle_io.write_tensor(
            root / f"scale_{s:04d}.aeb1", bank.entries[s].astype(np.float32)
        )
    try:
        (root / _BANK_MANIFEST).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise StorageError(f"cannot write bank manifest in {root}: {exc}") from exc


def load_bank(path: str | Path) -> MemoryBank:
    """Read a bank directory back; rows are re-normalized to unit float64.

    Raises:
        FormatError / IntegrityError / NormalizationError on bad data.
    """
    root = Path(path)
    mpath = root / _BANK_MANIFEST
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read {mpath}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: not valid JSON: {exc}") from exc
    if manifest.get("format") != "aeb-bank":
        raise FormatError(f"{mpath}: not a bank manifest")
    if manifest.get("version") != bundle_io.CONTAINER_VERSION:
        raise FormatError(f"{mpath}: unsupported version {manifest.get('version')!r}")
    dim = int(manifest["embedding_dim"])
    role = manifest["role"]
    entries: dict[int, np.ndarray] = {}
    provenance: dict[int, list[tuple[str, int, int]]] = {}
    scales = []
    for decl in manifest["scales"]:
        s = int(decl["scale_px"])
        scales.append(s)
        arr = bundle_io.read_tensor(root / decl["tensor"]).astype(np.float64)
        if arr.ndim != 2 or arr.shape != (decl["count"], dim):
            raise IntegrityError(
                f"{root}: scale {s} tensor shape {arr.shape} does not match "
                f"declared ({decl['count']}, {dim})"
            )
        if arr.shape[0]:
            norms = np.linalg.norm(arr, axis=1)
            if float(norms.min()) < 1e-12:
                raise NormalizationError(f"{root}: zero entry in scale {s}")
            arr = arr / norms[:, None]
        entries[s] = arr
        prov_rows = manifest.get("provenance", {}).get(str(s), [])
        provenance[s] = [(str(r[0]), int(r[1]), int(r[2])) for r in prov_rows]
    return MemoryBank(
        role=BankRole(role),
        scales=tuple(scales),
        dim=dim,
        entries=entries,
        provenance=provenance,
    )
