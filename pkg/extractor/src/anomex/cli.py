"""Command-line interface.

Subcommands: extract (one image to a bundle), text-states (per-class
state vectors), augment (augmented image files), dataset (walk a
dataset layout into bundles plus a manifest the scoring engine can
evaluate directly). Exit codes: 0 success, 2 bad input, 1 internal
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from .aeb import write_dataset_manifest, write_text_states
from .augment import augment
from .config import AGGREGATIONS, AUG_KINDS, ExtractorConfig
from .encoders import get_encoder
from .errors import ExtractorError
from .layouts import LAYOUT_NAMES, discover
from .pipeline import extract_bundle, extract_mask, load_image, load_mask
from .prompts import TEMPLATE_SETS, extract_text_states


def _eprint(*parts: object) -> None:
    print(*parts, file=sys.stderr)


def _parse_scales(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError as exc:
        raise ValueError(f"bad scale list {text!r}: {exc}") from exc


def _config_from(args: argparse.Namespace) -> ExtractorConfig:
    kwargs = {}
    for flag, field in (
        ("encoder", "encoder"),
        ("resolution", "input_resolution"),
        ("patch", "patch_size"),
        ("aggregation", "aggregation"),
        ("template_set", "template_set"),
        ("dim", "dim"),
        ("seed", "seed"),
        ("augment", "n_augmentations"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            kwargs[field] = value
    scales = getattr(args, "scales", None)
    if scales is not None:
        kwargs["scales"] = _parse_scales(scales)
    kinds = getattr(args, "kinds", None)
    if kinds is not None:
        kwargs["aug_kinds"] = tuple(kinds.split(","))
    return ExtractorConfig(**kwargs)


def _record_seed(seed: int, image_id: str) -> int:
    """Stable per-image augmentation seed."""
    digest = hashlib.sha256(f"{seed}\x1f{image_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:6], "little")


# ---------------------------------------------------------------------------
# subcommands


def cmd_extract(args: argparse.Namespace) -> int:
    config = _config_from(args)
    encoder = get_encoder(config)
    image = load_image(args.image)
    image_id = args.id or Path(args.image).stem
    out_dir = Path(args.out)
    bundle = extract_bundle(
        image,
        image_id=image_id,
        class_name=args.class_name,
        config=config,
        encoder=encoder,
        out_dir=out_dir,
        label=args.label,
    )
    mask_out = None
    if args.mask:
        mask_out = str(extract_mask(load_mask(args.mask), config, out_dir / "mask.aeb1"))
    print(json.dumps({"bundle": str(bundle), "mask": mask_out}, indent=2))
    return 0


def cmd_text_states(args: argparse.Namespace) -> int:
    config = _config_from(args)
    encoder = get_encoder(config)
    normal, anomalous = extract_text_states(args.class_name, config.template_set, encoder)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_text_states(out, normal, anomalous)
    print(out)
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    image = load_image(args.image)
    mask = load_mask(args.mask) if args.mask else None
    if mask is not None and mask.shape != image.shape[:2]:
        raise ExtractorError(
            f"mask size {mask.shape} does not match image {image.shape[:2]}"
        )
    kinds = tuple(args.kinds.split(",")) if args.kinds else AUG_KINDS
    samples = augment(image, mask, args.m, args.seed, kinds)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for i, s in enumerate(samples):
        img_path = out_dir / f"aug_{i:03d}.png"
        Image.fromarray(s.image, mode="RGB").save(img_path)
        mask_path = None
        if s.mask is not None:
            mask_path = out_dir / f"aug_{i:03d}_mask.png"
            Image.fromarray(s.mask.astype(np.uint8) * 255, mode="L").save(mask_path)
        outputs.append(
            {
                "image": img_path.name,
                "mask": mask_path.name if mask_path else None,
                "chain": list(s.chain),
            }
        )
    report = {"outputs": outputs}
    (out_dir / "chains.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _extract_record(rec, config: ExtractorConfig, encoder, out_root: Path) -> dict:
    """Extract one dataset record; returns its manifest entry."""
    image = load_image(rec.image_path)
    rel_bundle = f"{rec.class_name}/{rec.image_id}"
    extract_bundle(
        image,
        image_id=rec.image_id,
        class_name=rec.class_name,
        config=config,
        encoder=encoder,
        out_dir=out_root / rel_bundle,
        label=rec.label,
    )
    entry: dict = {"id": rec.image_id, "bundle_path": rel_bundle, "label": rec.label}
    mask = None
    if rec.mask_path:
        mask = load_mask(rec.mask_path)
        rel_mask = f"{rec.class_name}/{rec.image_id}_mask.aeb1"
        extract_mask(mask, config, out_root / rel_mask)
        entry["mask_path"] = rel_mask
    # augmented copies feed downstream weight validation; only bundles
    # that can be drawn for it (annotated anomalous, any normal) get them
    eligible = rec.label == 0 or (rec.label == 1 and mask is not None)
    if config.n_augmentations > 0 and eligible:
        samples = augment(
            image,
            mask,
            config.n_augmentations,
            _record_seed(config.seed, rec.image_id),
            config.aug_kinds,
        )
        aug_paths = []
        for k, s in enumerate(samples):
            rel_aug = f"{rec.class_name}/{rec.image_id}_aug{k}"
            extract_bundle(
                s.image,
                image_id=f"{rec.image_id}_aug{k}",
                class_name=rec.class_name,
                config=config,
                encoder=encoder,
                out_dir=out_root / rel_aug,
                label=rec.label,
            )
            aug_paths.append(rel_aug)
        entry["aug_paths"] = aug_paths
    return entry


def cmd_dataset(args: argparse.Namespace) -> int:
    config = _config_from(args)
    encoder = get_encoder(config)
    by_class = discover(args.root, args.layout)
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    all_records = [rec for records in by_class.values() for rec in records]
    workers = max(1, args.threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(
                pool.map(
                    lambda rec: _extract_record(rec, config, encoder, out_root),
                    all_records,
                )
            )
    else:
        entries = [_extract_record(rec, config, encoder, out_root) for rec in all_records]
    by_id = {e["id"]: e for e in entries}
    classes = {
        cls: [by_id[rec.image_id] for rec in records]
        for cls, records in by_class.items()
    }
    states = {}
    (out_root / "states").mkdir(exist_ok=True)
    for cls in by_class:
        normal, anomalous = extract_text_states(cls, config.template_set, encoder)
        rel = f"states/{cls}.aeb1"
        write_text_states(out_root / rel, normal, anomalous)
        states[cls] = rel
    manifest_path = out_root / "dataset.json"
    write_dataset_manifest(manifest_path, classes, states)
    summary = {
        "manifest": str(manifest_path),
        "classes": {
            cls: {
                "images": len(records),
                "anomalous": sum(r.label for r in records),
                "augmented": sum(len(by_id[r.image_id].get("aug_paths", [])) for r in records),
            }
            for cls, records in by_class.items()
        },
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--encoder", default=None, help="encoder backend name")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anomex", description="image to embedding-bundle extractor"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ext = sub.add_parser("extract", help="extract one image into a bundle directory")
    p_ext.add_argument("--image", required=True)
    p_ext.add_argument("--class", dest="class_name", required=True)
    p_ext.add_argument("--out", required=True, help="bundle directory to write")
    p_ext.add_argument("--id", default=None, help="image id (default: file stem)")
    p_ext.add_argument("--label", type=int, choices=[0, 1], default=None)
    p_ext.add_argument("--mask", default=None, help="annotation image to convert")
    p_ext.add_argument("--scales", default=None, help="comma-separated window sizes")
    p_ext.add_argument("--aggregation", choices=list(AGGREGATIONS), default=None)
    _add_encoder_flags(p_ext)
    p_ext.set_defaults(func=cmd_extract)

    p_txt = sub.add_parser("text-states", help="write per-class text state vectors")
    p_txt.add_argument("--class", dest="class_name", required=True)
    p_txt.add_argument("--out", required=True, help="tensor file to write")
    p_txt.add_argument(
        "--template-set", dest="template_set", choices=sorted(TEMPLATE_SETS), default=None
    )
    _add_encoder_flags(p_txt)
    p_txt.set_defaults(func=cmd_text_states)

    p_aug = sub.add_parser("augment", help="write augmented copies of an image")
    p_aug.add_argument("--image", required=True)
    p_aug.add_argument("--mask", default=None)
    p_aug.add_argument("--m", type=int, default=5)
    p_aug.add_argument("--seed", type=int, default=0)
    p_aug.add_argument("--kinds", default=None, help="comma-separated transform kinds")
    p_aug.add_argument("--out", required=True)
    p_aug.set_defaults(func=cmd_augment)

    p_ds = sub.add_parser("dataset", help="extract a dataset tree into an eval manifest")
    p_ds.add_argument("--root", required=True)
    p_ds.add_argument("--layout", choices=list(LAYOUT_NAMES), required=True)
    p_ds.add_argument("--out", required=True)
    p_ds.add_argument("--scales", default=None, help="comma-separated window sizes")
    p_ds.add_argument("--aggregation", choices=list(AGGREGATIONS), default=None)
    p_ds.add_argument(
        "--template-set", dest="template_set", choices=sorted(TEMPLATE_SETS), default=None
    )
    p_ds.add_argument("--augment", type=int, default=None, help="augmented copies per bundle")
    p_ds.add_argument("--kinds", default=None, help="comma-separated transform kinds")
    p_ds.add_argument("--threads", type=int, default=1)
    _add_encoder_flags(p_ds)
    p_ds.set_defaults(func=cmd_dataset)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (ExtractorError, ValueError) as exc:
        _eprint(f"error: {exc}")
        return 2
    except Exception:
        traceback.print_exc(file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
