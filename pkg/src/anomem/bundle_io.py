"""Reading and writing embedding bundles, masks, and text states.

On-disk layout for a bundle is a directory holding manifest.json plus
one binary tensor file per stored tensor. A tensor file is:

    bytes 0..3   magic "AEB1"
    byte  4      container version, currently 1
    byte  5      element code: 1 = float32 little-endian, 2 = uint8
    bytes 6..7   reserved, must be zero
    bytes 8..11  rank, uint32 little-endian
    then         rank * uint32 little-endian dimension sizes
    then         row-major payload

The manifest records image identity, pixel dimensions, the window
layout per scale (window size, stride, offset), the embedding dim,
an optional binary label, and the tensor file names. Payloads are
stored exactly as float32; all computation happens on normalized
float64 copies produced on demand, so a read bundle written back out
is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import normalize
from .errors import (
    DimensionMismatchError,
    FormatError,
    GeometryError,
    IntegrityError,
    NormalizationError,
    ScaleMismatchError,
    StorageError,
)

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


# ---------------------------------------------------------------------------
# tensor container


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write an array to a tensor container file.

    float32 and uint8 arrays are supported; anything else is coerced to
    float32. Multi-byte values are written little-endian.
    """
    arr = np.asarray(array)
    if arr.dtype == np.uint8:
        code = ELEMENT_UINT8
    else:
        code = ELEMENT_FLOAT32
    # ascontiguousarray would promote rank-0 arrays to rank 1; tobytes()
    # already serializes row-major for any layout
    arr = np.asarray(arr, dtype=_ELEMENT_DTYPES[code])
    if arr.ndim > _MAX_RANK:
        raise FormatError(f"rank {arr.ndim} exceeds container limit {_MAX_RANK}")
    header = MAGIC + struct.pack("<BBH", CONTAINER_VERSION, code, 0)
    header += struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(arr.tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write tensor file {path}: {exc}") from exc


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor container file back into an array.

    Raises:
        FormatError: bad magic, unsupported version or element code.
        IntegrityError: declared shape disagrees with the payload size.
        StorageError: the file cannot be read at all.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read tensor file {path}: {exc}") from exc
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, code, reserved = struct.unpack_from("<BBH", raw, 4)
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    if code not in _ELEMENT_DTYPES:
        raise FormatError(f"{path}: unknown element code {code}")
    if reserved != 0:
        raise FormatError(f"{path}: reserved bytes must be zero, got {reserved}")
    (rank,) = struct.unpack_from("<I", raw, 8)
    if rank > _MAX_RANK:
        raise FormatError(f"{path}: rank {rank} exceeds container limit {_MAX_RANK}")
    if len(raw) < 12 + 4 * rank:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    payload = raw[12 + 4 * rank :]
    dtype = _ELEMENT_DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
    if rank == 0:
        dims = ()
        expected = dtype.itemsize
    if len(payload) != expected:
        raise IntegrityError(
            f"{path}: payload holds {len(payload)} bytes, shape {tuple(dims)} "
            f"requires {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


# ---------------------------------------------------------------------------
# bundle types


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise IntegrityError(f"{name} contains non-finite values")


def _check_no_zero_rows(name: str, rows: np.ndarray) -> None:
    # rows: (n, dim) float array
    norms = np.linalg.norm(rows.astype(np.float64, copy=False), axis=1)
    if norms.size and float(norms.min()) < 1e-12:
        raise NormalizationError(f"{name} holds a zero embedding vector")


@dataclass
class ScaleGrid:
    """Patch embeddings for one window scale.

    embeddings has shape (rows, cols, dim) and is kept exactly as
    stored (float32). Window (i, j) covers the pixel rectangle starting
    at (offset_y + i * stride_y, offset_x + j * stride_x) with side
    scale_px; windows may overlap.
    """

    scale_px: int
    stride_y: int
    stride_x: int
    embeddings: np.ndarray
    offset_y: int = 0
    offset_x: int = 0
    _unit: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim != 3:
            raise DimensionMismatchError(
                f"grid embeddings must be (rows, cols, dim), got {self.embeddings.shape}"
            )
        rows, cols, dim = self.embeddings.shape
        if rows < 1 or cols < 1 or dim < 1:
            raise DimensionMismatchError(f"degenerate grid shape {self.embeddings.shape}")
        if self.scale_px < 1:
            raise GeometryError(f"window size must be positive, got {self.scale_px}")
        if self.offset_y < 0 or self.offset_x < 0:
            raise GeometryError("window offsets must be nonnegative")
        if (rows > 1 and self.stride_y < 1) or (cols > 1 and self.stride_x < 1):
            raise GeometryError("stride must be at least 1 when the grid repeats")
        if self.stride_y < 0 or self.stride_x < 0:
            raise GeometryError("strides must be nonnegative")
        name = f"scale {self.scale_px} grid"
        _check_finite(name, self.embeddings)
        _check_no_zero_rows(name, self.embeddings.reshape(rows * cols, dim))

    @property
    def rows(self) -> int:
        return self.embeddings.shape[0]

    @property
    def cols(self) -> int:
        return self.embeddings.shape[1]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[2]

    def window_origin(self, i: int, j: int) -> tuple[int, int]:
        """Top-left pixel (y, x) of window (i, j)."""
        return (self.offset_y + i * self.stride_y, self.offset_x + j * self.stride_x)

    def unit(self) -> np.ndarray:
        """Normalized float64 view, shape (rows, cols, dim); cached."""
        if self._unit is None:
            flat = self.embeddings.reshape(-1, self.dim).astype(np.float64)
            norms = np.linalg.norm(flat, axis=1, keepdims=True)
            self._unit = (flat / norms).reshape(self.embeddings.shape)
        return self._unit


@dataclass
class EmbeddingBundle:
    """All embeddings extracted from one image.

    Invariants enforced at construction: one grid per scale with scales
    strictly increasing, a single embedding dim shared by the global
    vector and every grid, every window inside the image bounds, all
    values finite, no zero vectors.
    """

    image_id: str
    class_name: str
    image_width: int
    image_height: int
    global_embedding: np.ndarray
    grids: tuple[ScaleGrid, ...]
    label: int | None = None

    def __post_init__(self) -> None:
        self.global_embedding = np.ascontiguousarray(
            self.global_embedding, dtype=np.float32
        )
        if self.global_embedding.ndim != 1 or self.global_embedding.size < 1:
            raise DimensionMismatchError(
                f"global embedding must be 1-d, got shape {self.global_embedding.shape}"
            )
        _check_finite("global embedding", self.global_embedding)
        _check_no_zero_rows("global embedding", self.global_embedding[None, :])
        if self.image_width < 1 or self.image_height < 1:
            raise GeometryError(
                f"image size {self.image_width}x{self.image_height} is not positive"
            )
        self.grids = tuple(self.grids)
        if not self.grids:
            raise ScaleMismatchError("bundle must hold at least one scale grid")
        scales = [g.scale_px for g in self.grids]
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ScaleMismatchError(f"scales must be strictly increasing, got {scales}")
        dim = self.global_embedding.size
        for g in self.grids:
            if g.dim != dim:
                raise DimensionMismatchError(
                    f"scale {g.scale_px} dim {g.dim} != global dim {dim}"
                )
            last_y = g.offset_y + (g.rows - 1) * g.stride_y + g.scale_px
            last_x = g.offset_x + (g.cols - 1) * g.stride_x + g.scale_px
            if last_y > self.image_height or last_x > self.image_width:
                raise GeometryError(
                    f"scale {g.scale_px} windows extend to ({last_y}, {last_x}), "
                    f"image is {self.image_height}x{self.image_width}"
                )
        if self.label is not None and self.label not in (0, 1):
            raise IntegrityError(f"label must be 0, 1, or absent, got {self.label!r}")

    @property
    def dim(self) -> int:
        return self.global_embedding.size

    @property
    def scales(self) -> tuple[int, ...]:
        return tuple(g.scale_px for g in self.grids)

    def grid(self, scale_px: int) -> ScaleGrid:
        for g in self.grids:
            if g.scale_px == scale_px:
                return g
        raise ScaleMismatchError(f"bundle {self.image_id} has no scale {scale_px}")

    def unit_global(self) -> np.ndarray:
        return normalize(self.global_embedding)


@dataclass
class AnnotationMask:
    """Binary pixel annotation; nonzero marks anomalous pixels."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.ascontiguousarray(self.bits).astype(bool)
        if self.bits.ndim != 2:
            raise DimensionMismatchError(f"mask must be 2-d, got shape {self.bits.shape}")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass
class TextStatePair:
    """Aggregated text embeddings for the two prompt states."""

    normal: np.ndarray
    anomalous: np.ndarray

    def __post_init__(self) -> None:
        self.normal = np.ascontiguousarray(self.normal, dtype=np.float32)
        self.anomalous = np.ascontiguousarray(self.anomalous, dtype=np.float32)
        if self.normal.ndim != 1 or self.anomalous.ndim != 1:
            raise DimensionMismatchError("text states must be 1-d vectors")
        if self.normal.shape != self.anomalous.shape:
            raise DimensionMismatchError(
                f"state dims differ: {self.normal.shape} vs {self.anomalous.shape}"
            )
        for name, vec in (("normal", self.normal), ("anomalous", self.anomalous)):
            _check_finite(f"{name} text state", vec)
            _check_no_zero_rows(f"{name} text state", vec[None, :])

    @property
    def dim(self) -> int:
        return self.normal.size

    def unit_normal(self) -> np.ndarray:
        return normalize(self.normal)

    def unit_anomalous(self) -> np.ndarray:
        return normalize(self.anomalous)


# ---------------------------------------------------------------------------
# bundle directory I/O


def _tensor_name(scale_px: int) -> str:
    return f"scale_{scale_px:04d}.aeb1"


def write_bundle(bundle: EmbeddingBundle, path: str | Path) -> None:
    """Write a bundle directory; overwrites tensor files already there."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create bundle directory {root}: {exc}") from exc
    manifest = {
        "format": "aeb",
        "version": CONTAINER_VERSION,
        "image_id": bundle.image_id,
        "class_name": bundle.class_name,
        "image_width": bundle.image_width,
        "image_height": bundle.image_height,
        "embedding_dim": bundle.dim,
        "label": bundle.label,
        "global_tensor": "global.aeb1",
        "scales": [
            {
                "scale_px": g.scale_px,
                "rows": g.rows,
                "cols": g.cols,
                "stride_y": g.stride_y,
                "stride_x": g.stride_x,
                "offset_y": g.offset_y,
                "offset_x": g.offset_x,
                "tensor": _tensor_name(g.scale_px),
            }
            for g in bundle.grids
        ],
    }
    write_tensor(root / "global.aeb1", bundle.global_embedding)
    for g in bundle.grids:
        write_tensor(root / _tensor_name(g.scale_px), g.embeddings)
    try:
        (root / MANIFEST_NAME).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise StorageError(f"cannot write bundle manifest in {root}: {exc}") from exc


def _load_manifest(root: Path) -> dict:
    mpath = root / MANIFEST_NAME
    try:
        text = mpath.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read {mpath}: {exc}") from exc
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise FormatError(f"{mpath}: manifest must be a JSON object")
    return manifest


def _require(manifest: dict, key: str, where: str):
    if key not in manifest:
        raise FormatError(f"{where}: manifest missing required key {key!r}")
    return manifest[key]


def read_bundle(path: str | Path) -> EmbeddingBundle:
    """Read a bundle directory written by write_bundle (or compatible).

    Tensor payloads are validated against the manifest declarations;
    any disagreement raises IntegrityError. Structural problems raise
    FormatError, zero embeddings NormalizationError.
    """
    root = Path(path)
    manifest = _load_manifest(root)
    where = str(root)
    version = _require(manifest, "version", where)
    if version != CONTAINER_VERSION:
        raise FormatError(f"{where}: unsupported bundle version {version!r}")
    dim = _require(manifest, "embedding_dim", where)
    global_arr = read_tensor(root / _require(manifest, "global_tensor", where))
    if global_arr.ndim != 1 or global_arr.shape[0] != dim:
        raise IntegrityError(
            f"{where}: global tensor shape {global_arr.shape} does not match "
            f"declared dim {dim}"
        )
    scales_decl = _require(manifest, "scales", where)
    if not isinstance(scales_decl, list) or not scales_decl:
        raise FormatError(f"{where}: manifest key 'scales' must be a nonempty list")
    grids = []
    for decl in scales_decl:
        for key in ("scale_px", "rows", "cols", "stride_y", "stride_x", "tensor"):
            if key not in decl:
                raise FormatError(f"{where}: scale entry missing key {key!r}")
        arr = read_tensor(root / decl["tensor"])
        declared = (decl["rows"], decl["cols"], dim)
        if arr.shape != declared:
            raise IntegrityError(
                f"{where}: scale {decl['scale_px']} tensor shape {arr.shape} "
                f"does not match declared {declared}"
            )
        grids.append(
            ScaleGrid(
                scale_px=decl["scale_px"],
                stride_y=decl["stride_y"],
                stride_x=decl["stride_x"],
                offset_y=decl.get("offset_y", 0),
                offset_x=decl.get("offset_x", 0),
                embeddings=arr,
            )
        )
    return EmbeddingBundle(
        image_id=str(_require(manifest, "image_id", where)),
        class_name=str(_require(manifest, "class_name", where)),
        image_width=int(_require(manifest, "image_width", where)),
        image_height=int(_require(manifest, "image_height", where)),
        global_embedding=global_arr,
        grids=tuple(grids),
        label=manifest.get("label"),
    )


# ---------------------------------------------------------------------------
# masks and text states


def read_mask(path: str | Path, width: int, height: int) -> AnnotationMask:
    """Read a pixel annotation mask and check it against the image size.

    Accepts a single-channel 8-bit PNG (any nonzero pixel is anomalous)
    or a rank-2 uint8 tensor container of 0/1 values.
    """
    p = Path(path)
    try:
        head = p.open("rb").read(4)
    except OSError as exc:
        raise StorageError(f"cannot read mask {p}: {exc}") from exc
    if head == MAGIC:
        arr = read_tensor(p)
        if arr.ndim != 2:
            raise FormatError(f"{p}: mask tensor must be rank 2, got rank {arr.ndim}")
        if arr.dtype != np.uint8:
            raise FormatError(f"{p}: mask tensor must be uint8")
        if arr.max(initial=0) > 1:
            raise IntegrityError(f"{p}: mask tensor values must be 0 or 1")
        bits = arr.astype(bool)
    else:
        try:
            with Image.open(p) as img:
                if img.mode == "1":
                    img = img.convert("L")
                if img.mode != "L":
                    raise FormatError(
                        f"{p}: mask image must be single-channel 8-bit, mode is {img.mode}"
                    )
                bits = np.asarray(img) > 0
        except UnidentifiedImageError as exc:
            raise FormatError(f"{p}: not a mask tensor or a readable image") from exc
        except OSError as exc:
            raise StorageError(f"cannot read mask {p}: {exc}") from exc
    if bits.shape != (height, width):
        raise DimensionMismatchError(
            f"{p}: mask is {bits.shape[1]}x{bits.shape[0]}, image is {width}x{height}"
        )
    return AnnotationMask(bits=bits)


def write_text_states(pair: TextStatePair, path: str | Path) -> None:
    """Write a text state pair as a (2, dim) tensor: row 0 normal, row 1 anomalous."""
    write_tensor(path, np.stack([pair.normal, pair.anomalous]))


def read_text_states(path: str | Path) -> TextStatePair:
    arr = read_tensor(path)
    if arr.ndim != 2 or arr.shape[0] != 2:
        raise FormatError(
            f"{path}: text states must be a (2, dim) tensor, got shape {arr.shape}"
        )
    return TextStatePair(normal=arr[0], anomalous=arr[1])
