"""Dataset directory layout adapters.

An adapter walks a dataset root and yields one record per image with
its class, binary label, and optional pixel annotation. Three common
conventions are built in:

    mvtec: <root>/<class>/train/good/*, <root>/<class>/test/<defect>/*,
           masks at <root>/<class>/ground_truth/<defect>/<stem>_mask.png
    visa:  <root>/<class>/Data/Images/{Normal,Anomaly}/*,
           masks at <root>/<class>/Data/Masks/Anomaly/<stem>.png
    flat:  <root>/<class>/{normal,anomalous}/*,
           masks at <root>/<class>/masks/<stem>.png
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import LayoutError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass(frozen=True)
class ImageRecord:
    """One dataset image with its ground truth."""

    class_name: str
    image_id: str
    image_path: str
    label: int
    mask_path: str | None = None


def _images(directory: Path) -> list[Path]:
    if not directory.is_dir():
        return []
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def _class_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise LayoutError(f"dataset root {root} is not a directory")
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise LayoutError(f"dataset root {root} holds no class directories")
    return dirs


def _discover_mvtec(root: Path) -> list[ImageRecord]:
    records = []
    for cdir in _class_dirs(root):
        cls = cdir.name
        for img in _images(cdir / "train" / "good"):
            records.append(
                ImageRecord(cls, f"{cls}-train-good-{img.stem}", str(img), 0)
            )
        test = cdir / "test"
        if test.is_dir():
            for ddir in sorted(p for p in test.iterdir() if p.is_dir()):
                defect = ddir.name
                label = 0 if defect == "good" else 1
                for img in _images(ddir):
                    mask = cdir / "ground_truth" / defect / f"{img.stem}_mask.png"
                    records.append(
                        ImageRecord(
                            cls,
                            f"{cls}-test-{defect}-{img.stem}",
                            str(img),
                            label,
                            str(mask) if label and mask.is_file() else None,
                        )
                    )
    return records


def _discover_visa(root: Path) -> list[ImageRecord]:
    records = []
    for cdir in _class_dirs(root):
        cls = cdir.name
        base = cdir / "Data"
        for img in _images(base / "Images" / "Normal"):
            records.append(ImageRecord(cls, f"{cls}-normal-{img.stem}", str(img), 0))
        for img in _images(base / "Images" / "Anomaly"):
            mask = base / "Masks" / "Anomaly" / f"{img.stem}.png"
            records.append(
                ImageRecord(
                    cls,
                    f"{cls}-anomaly-{img.stem}",
                    str(img),
                    1,
                    str(mask) if mask.is_file() else None,
                )
            )
    return records


def _discover_flat(root: Path) -> list[ImageRecord]:
    records = []
    for cdir in _class_dirs(root):
        cls = cdir.name
        for img in _images(cdir / "normal"):
            records.append(ImageRecord(cls, f"{cls}-normal-{img.stem}", str(img), 0))
        for img in _images(cdir / "anomalous"):
            candidates = [
                p for p in (cdir / "masks").glob(f"{img.stem}.*")
                if p.suffix.lower() in IMAGE_SUFFIXES
            ]
            records.append(
                ImageRecord(
                    cls,
                    f"{cls}-anomalous-{img.stem}",
                    str(img),
                    1,
                    str(sorted(candidates)[0]) if candidates else None,
                )
            )
    return records


_LAYOUTS = {
    "mvtec": _discover_mvtec,
    "visa": _discover_visa,
    "flat": _discover_flat,
}

LAYOUT_NAMES = tuple(sorted(_LAYOUTS))


def discover(root: str | Path, layout: str) -> dict[str, list[ImageRecord]]:
    """Walk a dataset root; returns class name -> records, never empty."""
    fn = _LAYOUTS.get(layout)
    if fn is None:
        raise LayoutError(f"unknown layout {layout!r}; available: {LAYOUT_NAMES}")
    records = fn(Path(root))
    if not records:
        raise LayoutError(f"layout {layout!r} found no images under {root}")
    by_class: dict[str, list[ImageRecord]] = {}
    for rec in records:
        by_class.setdefault(rec.class_name, []).append(rec)
    return by_class
