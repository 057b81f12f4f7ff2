"""Independent writer for the AEB interchange format.

This module re-states the on-disk contract from scratch so the extractor
can be installed and run without the scoring engine present. A tensor
file is:

    bytes 0..3   magic "AEB1"
    byte  4      container version, currently 1
    byte  5      element code: 1 = float32 little-endian, 2 = uint8
    bytes 6..7   reserved, must be zero
    bytes 8..11  rank, uint32 little-endian
    then         rank * uint32 little-endian dimension sizes
    then         row-major payload

A bundle is a directory holding manifest.json plus one tensor file per
scale and one for the global embedding. Text states are a single (2, dim)
float32 tensor: row 0 normal, row 1 anomalous. Masks are rank-2 uint8
tensors of 0/1 values. Dataset manifests are JSON objects with a
"classes" mapping and a "text_states" mapping.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ExtractorError

MAGIC = b"AEB1"
CONTAINER_VERSION = 1
ELEMENT_FLOAT32 = 1
ELEMENT_UINT8 = 2
_ELEMENT_DTYPES = {
    ELEMENT_FLOAT32: np.dtype("<f4"),
    ELEMENT_UINT8: np.dtype("u1"),
}
_MAX_RANK = 8

MANIFEST_NAME = "manifest.json"
GLOBAL_TENSOR_NAME = "global.aeb1"


def tensor_name(scale_px: int) -> str:
    """File name for a scale grid tensor inside a bundle directory."""
    return f"scale_{scale_px:04d}.aeb1"


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write an array to a tensor container file.

    uint8 input stays uint8; everything else is stored as float32
    little-endian.
    """
    arr = np.asarray(array)
    code = ELEMENT_UINT8 if arr.dtype == np.uint8 else ELEMENT_FLOAT32
    arr = np.asarray(arr, dtype=_ELEMENT_DTYPES[code])
    if arr.ndim > _MAX_RANK:
        raise ExtractorError(f"rank {arr.ndim} exceeds container limit {_MAX_RANK}")
    header = MAGIC + struct.pack("<BBH", CONTAINER_VERSION, code, 0)
    header += struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(arr.tobytes())
    except OSError as exc:
        raise ExtractorError(f"cannot write tensor file {path}: {exc}") from exc


def read_tensor(path: str | Path) -> np.ndarray:
    """Read back a tensor container file (self-check and test support)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ExtractorError(f"cannot read tensor file {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ExtractorError(f"{path}: not a tensor container")
    version, code, reserved = struct.unpack_from("<BBH", raw, 4)
    if version != CONTAINER_VERSION or code not in _ELEMENT_DTYPES or reserved != 0:
        raise ExtractorError(f"{path}: unsupported container header")
    (rank,) = struct.unpack_from("<I", raw, 8)
    if rank > _MAX_RANK or len(raw) < 12 + 4 * rank:
        raise ExtractorError(f"{path}: bad rank or truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    payload = raw[12 + 4 * rank :]
    dtype = _ELEMENT_DTYPES[code]
    expected = dtype.itemsize * (int(np.prod(dims, dtype=np.int64)) if rank else 1)
    if len(payload) != expected:
        raise ExtractorError(
            f"{path}: payload holds {len(payload)} bytes, shape {tuple(dims)} "
            f"requires {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims if rank else ()).copy()


@dataclass(frozen=True)
class GridSpec:
    """One scale's window layout plus its embeddings.

    embeddings is (rows, cols, dim) float32; window (i, j) starts at
    pixel (offset_y + i * stride_y, offset_x + j * stride_x) and spans
    scale_px pixels per side.
    """

    scale_px: int
    stride_y: int
    stride_x: int
    embeddings: np.ndarray
    offset_y: int = 0
    offset_x: int = 0


def write_bundle_dir(
    path: str | Path,
    *,
    image_id: str,
    class_name: str,
    image_width: int,
    image_height: int,
    global_embedding: np.ndarray,
    grids: list[GridSpec] | tuple[GridSpec, ...],
    label: int | None = None,
) -> Path:
    """Write a complete bundle directory and return its path.

    The manifest layout and tensor names follow the interchange contract
    exactly; consumers validate geometry and normalization on read, so
    this writer only guards the structural basics.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    glob = np.asarray(global_embedding, dtype=np.float32)
    if glob.ndim != 1:
        raise ExtractorError(f"global embedding must be 1-d, got shape {glob.shape}")
    if label is not None and label not in (0, 1):
        raise ExtractorError(f"label must be 0, 1, or absent, got {label!r}")
    ordered = sorted(grids, key=lambda g: g.scale_px)
    manifest = {
        "format": "aeb",
        "version": CONTAINER_VERSION,
        "image_id": image_id,
        "class_name": class_name,
        "image_width": image_width,
        "image_height": image_height,
        "embedding_dim": int(glob.size),
        "label": label,
        "global_tensor": GLOBAL_TENSOR_NAME,
        "scales": [
            {
                "scale_px": g.scale_px,
                "rows": int(g.embeddings.shape[0]),
                "cols": int(g.embeddings.shape[1]),
                "stride_y": g.stride_y,
                "stride_x": g.stride_x,
                "offset_y": g.offset_y,
                "offset_x": g.offset_x,
                "tensor": tensor_name(g.scale_px),
            }
            for g in ordered
        ],
    }
    write_tensor(root / GLOBAL_TENSOR_NAME, glob)
    for g in ordered:
        emb = np.asarray(g.embeddings, dtype=np.float32)
        if emb.ndim != 3:
            raise ExtractorError(
                f"scale {g.scale_px} embeddings must be (rows, cols, dim), "
                f"got shape {emb.shape}"
            )
        write_tensor(root / tensor_name(g.scale_px), emb)
    (root / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return root


def write_text_states(path: str | Path, normal: np.ndarray, anomalous: np.ndarray) -> None:
    """Write a text state pair: row 0 normal, row 1 anomalous."""
    n = np.asarray(normal, dtype=np.float32)
    a = np.asarray(anomalous, dtype=np.float32)
    if n.ndim != 1 or a.shape != n.shape:
        raise ExtractorError(
            f"text states must be matching 1-d vectors, got {n.shape} and {a.shape}"
        )
    write_tensor(path, np.stack([n, a]))


def write_mask_tensor(path: str | Path, bits: np.ndarray) -> None:
    """Write a binary pixel annotation as a rank-2 uint8 tensor."""
    arr = np.asarray(bits)
    if arr.ndim != 2:
        raise ExtractorError(f"mask must be 2-d, got shape {arr.shape}")
    write_tensor(path, arr.astype(bool).astype(np.uint8))


def write_dataset_manifest(
    path: str | Path,
    classes: dict[str, list[dict]],
    text_states: dict[str, str],
) -> None:
    """Write a dataset manifest mapping classes to bundle entries.

    Entries are stored as given; paths should be relative to the
    manifest's directory so the tree stays relocatable.
    """
    if not classes:
        raise ExtractorError("dataset manifest needs at least one class")
    doc = {"classes": classes, "text_states": text_states}
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
