"""Dataset evaluation: tasks, AUROC, run aggregation, reports.

A dataset manifest maps class names to bundle entries. For each class
and repetition, one pixel-annotated anomalous bundle becomes the
training sample, one normal bundle is reserved for weight validation,
and the rest (capped) become the test set scored into an AUROC.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

from ._concurrency import map_ordered
from .bundle_io import EmbeddingBundle, read_bundle, read_mask
from .config import MODES, WEIGHT_SOURCES, EngineConfig
from .core import rng_for
from .errors import (
    DegenerateLabelsError,
    DimensionMismatchError,
    FormatError,
    InsufficientDataError,
    IntegrityError,
    ScaleMismatchError,
    StorageError,
)
from .memory import MemoryBank, build_anomalous_bank, build_reference_bank
from .scoring import (
    ScoreVector,
    aggregate,
    baseline_weights,
    check_weights,
    redistribute_empty_scales,
    score_vector,
    winclip_weights,
)
from .weights import TraceEntry, monte_carlo_search


# ---------------------------------------------------------------------------
# AUROC


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    n = x.size
    order = np.argsort(x, kind="mergesort")
    s = x[order]
    boundary = np.empty(n, dtype=bool)
    boundary[0] = True
    boundary[1:] = s[1:] != s[:-1]
    firsts = np.flatnonzero(boundary)
    counts = np.diff(np.append(firsts, n))
    mid = firsts + (counts - 1) / 2.0 + 1.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = mid[np.cumsum(boundary) - 1]
    return ranks

def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a positive outranks a negative, ties worth half.

    Computed from midranks, which agrees exactly with the quadratic
    pairwise count: both numerators are exact multiples of one half in
    float64 at any feasible input size.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.shape != s.shape:
        raise DimensionMismatchError(
            f"scores shape {s.shape} and labels shape {y.shape} must match, 1-d"
        )
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    y = y.astype(np.int64)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUROC needs at least one label of each class")
    ranks = _midranks(s)
    u = float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# dataset manifest


@dataclass(frozen=True)
class BundleEntry:
    """One dataset row: a bundle on disk plus its ground truth."""

    id: str
    bundle_path: str
    label: int
    mask_path: str | None = None
    aug_paths: tuple[str, ...] = ()


@dataclass(frozen=True)
class DatasetManifest:
    classes: dict[str, tuple[BundleEntry, ...]]
    text_states: dict[str, str]
    path: str


def _resolve(base: Path, p: str) -> str:
    q = Path(p)
    return str(q if q.is_absolute() else base / q)


def load_dataset_manifest(path: str | Path) -> DatasetManifest:
    """Read a dataset manifest.

    Accepted shapes: a bare object mapping class name to entry list, or
    an object with a "classes" mapping and an optional "text_states"
    mapping of class name to text-state tensor path. Relative paths are
    resolved against the manifest's directory.
    """
    mpath = Path(path)
    try:
        raw = json.loads(mpath.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read manifest {mpath}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or not raw:
        raise FormatError(f"{mpath}: manifest must be a nonempty JSON object")
    base = mpath.parent
    if "classes" in raw and isinstance(raw["classes"], dict):
        class_map = raw["classes"]
        states_map = raw.get("text_states", {})
        if not isinstance(states_map, dict):
            raise FormatError(f"{mpath}: 'text_states' must map class to path")
    else:
        class_map = raw
        states_map = {}
    classes: dict[str, tuple[BundleEntry, ...]] = {}
    for cls, items in class_map.items():
        if not isinstance(items, list) or not items:
            raise FormatError(f"{mpath}: class {cls!r} must hold a nonempty list")
        entries = []
        seen_ids = set()
        for pos, item in enumerate(items):
            if not isinstance(item, dict) or "bundle_path" not in item:
                raise FormatError(
                    f"{mpath}: class {cls!r} entry {pos} must be an object with bundle_path"
                )
            label = item.get("label")
            if isinstance(label, bool) or label not in (0, 1):
                raise FormatError(
                    f"{mpath}: class {cls!r} entry {pos} needs an integer label 0 or 1"
                )
            bundle_path = _resolve(base, str(item["bundle_path"]))
            entry = BundleEntry(
                id=str(item.get("id", bundle_path)),
                bundle_path=bundle_path,
                label=int(label),
                mask_path=_resolve(base, str(item["mask_path"]))
                if item.get("mask_path")
                else None,
                aug_paths=tuple(_resolve(base, str(p)) for p in item.get("aug_paths", [])),
            )
            if entry.id in seen_ids:
                raise FormatError(f"{mpath}: class {cls!r} has duplicate id {entry.id!r}")
            seen_ids.add(entry.id)
            entries.append(entry)
        classes[cls] = tuple(entries)
    states = {str(c): _resolve(base, str(p)) for c, p in states_map.items()}
    return DatasetManifest(classes=classes, text_states=states, path=str(mpath))


# ---------------------------------------------------------------------------
# tasks


@dataclass(frozen=True)
class TaskSpec:
    """One evaluation repetition for one class.

    The training bundle and the validation bundle never appear in the
    test list, and the test list always covers both labels.
    """

    class_name: str
    run_index: int
    seed: int
    train_anomalous: BundleEntry
    val_normal: BundleEntry | None
    test: tuple[BundleEntry, ...]
    mode: str = "composite"
    weight_source: str = "baseline"
    fixed_weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.weight_source not in WEIGHT_SOURCES:
            raise ValueError(
                f"weight source must be one of {WEIGHT_SOURCES}, got {self.weight_source!r}"
            )
        if self.weight_source == "fixed" and self.fixed_weights is None:
            raise ValueError("weight source 'fixed' requires fixed_weights")
        if not self.test:
            raise InsufficientDataError(f"class {self.class_name}: empty test set")
        train_ids = {self.train_anomalous.id}
        if self.val_normal is not None:
            train_ids.add(self.val_normal.id)
        overlap = train_ids & {e.id for e in self.test}
        if overlap:
            raise IntegrityError(
                f"class {self.class_name}: bundles {sorted(overlap)} are both "
                f"training and test"
            )
        if len({e.label for e in self.test}) < 2:
            raise InsufficientDataError(
                f"class {self.class_name}: test set must contain both labels"
            )
        if self.train_anomalous.label != 1:
            raise IntegrityError(
                f"class {self.class_name}: training bundle {self.train_anomalous.id} "
                f"is not labeled anomalous"
            )


def build_tasks(
    manifest: DatasetManifest,
    runs_per_class: int = 3,
    max_test: int = 100,
    seed: int = 0,
    mode: str = "composite",
    weight_source: str = "baseline",
    class_names: Sequence[str] | None = None,
) -> list[TaskSpec]:
    """Draw the evaluation splits for every class, deterministically.

    Each class consumes its own derived stream ("task-split/<class>"),
    so adding or removing classes never changes another class's tasks.
    Per run: one uniformly drawn annotated anomalous training bundle
    (distinct across runs while candidates last), one uniformly drawn
    normal validation bundle, then up to max_test of the remaining
    bundles as test, shuffled, patched to cover both labels.

    Raises:
        InsufficientDataError: naming the class that cannot support
        the split.
    """
    tasks: list[TaskSpec] = []
    names = sorted(manifest.classes) if class_names is None else list(class_names)
    for cls in names:
        if cls not in manifest.classes:
            raise InsufficientDataError(f"class {cls}: not present in the manifest")
        entries = list(manifest.classes[cls])
        anom_with_mask = [e for e in entries if e.label == 1 and e.mask_path]
        n_anom = sum(1 for e in entries if e.label == 1)
        n_norm = sum(1 for e in entries if e.label == 0)
        if not anom_with_mask:
            raise InsufficientDataError(
                f"class {cls}: no anomalous bundle with a pixel mask"
            )
        if n_norm < 1:
            raise InsufficientDataError(f"class {cls}: no normal bundle")
        if n_anom < 2 or n_norm < 2:
            raise InsufficientDataError(
                f"class {cls}: needs at least two bundles of each label "
                f"(got {n_anom} anomalous, {n_norm} normal)"
            )
        normals = [e for e in entries if e.label == 0]
        gen = rng_for(seed, f"task-split/{cls}")
        used_train: set[str] = set()
        for run in range(runs_per_class):
            pool = [e for e in anom_with_mask if e.id not in used_train] or anom_with_mask
            train = pool[int(gen.integers(len(pool)))]
            used_train.add(train.id)
            val = normals[int(gen.integers(len(normals)))]
            remaining = [e for e in entries if e.id not in (train.id, val.id)]
            perm = [int(i) for i in gen.permutation(len(remaining))]
            chosen = [remaining[i] for i in perm[:max_test]]
            present = {e.label for e in chosen}
            if len(present) < 2:
                missing = 1 if 0 in present else 0
                swap = next(
                    (remaining[i] for i in perm[max_test:] if remaining[i].label == missing),
                    None,
                )
                if swap is None:
                    raise InsufficientDataError(
                        f"class {cls}: test split cannot cover both labels"
                    )
                chosen[-1] = swap
            task_seed = int(rng_for(seed, f"task-seed/{cls}/{run}").integers(1 << 63))
            tasks.append(
                TaskSpec(
                    class_name=cls,
                    run_index=run,
                    seed=task_seed,
                    train_anomalous=train,
                    val_normal=val,
                    test=tuple(chosen),
                    mode=mode,
                    weight_source=weight_source,
                )
            )
    return tasks


# ---------------------------------------------------------------------------
# running a task


@dataclass(frozen=True)
class TaskResult:
    class_name: str
    run_index: int
    mode: str
    weight_source: str
    seed: int
    weights: tuple[float, ...]
    val_auroc: float | None
    image_ids: tuple[str, ...]
    scores: tuple[float, ...]
    labels: tuple[int, ...]
    auroc: float


def _load_checked(entry: BundleEntry, config: EngineConfig) -> EmbeddingBundle:
    bundle = read_bundle(entry.bundle_path)
    if bundle.scales != config.scales:
        raise ScaleMismatchError(
            f"bundle {entry.id} scales {bundle.scales} != configured {config.scales}"
        )
    if bundle.label is not None and bundle.label != entry.label:
        raise IntegrityError(
            f"bundle {entry.id}: manifest label {entry.label} contradicts "
            f"stored label {bundle.label}"
        )
    return bundle


def _validation_pairs(
    task: TaskSpec,
    config: EngineConfig,
    ref_bank: MemoryBank,
    anom_bank: MemoryBank | None,
    states,
    workers: int,
) -> list[tuple[ScoreVector, int]]:
    if task.val_normal is None:
        raise InsufficientDataError(
            f"class {task.class_name}: validated weights need a normal validation bundle"
        )
    jobs: list[tuple[str, int]] = []
    pos = task.train_anomalous.aug_paths or (task.train_anomalous.bundle_path,)
    neg = task.val_normal.aug_paths or (task.val_normal.bundle_path,)
    jobs += [(p, 1) for p in pos]
    jobs += [(p, 0) for p in neg]

    def score_one(job: tuple[str, int]) -> tuple[ScoreVector, int]:
        path, label = job
        bundle = read_bundle(path)
        if bundle.scales != config.scales:
            raise ScaleMismatchError(
                f"validation bundle {path} scales {bundle.scales} != "
                f"configured {config.scales}"
            )
        return score_vector(bundle, ref_bank, anom_bank, states, config.tau), label

    return map_ordered(score_one, jobs, workers)


def run_task(
    task: TaskSpec,
    config: EngineConfig,
    states,
    workers: int = 1,
) -> TaskResult:
    """Build banks, resolve weights, score the test set, return the AUROC.

    composite mode builds both banks from the annotated anomalous
    training bundle. winclip-compat mode builds the reference bank from
    the normal validation bundle and uses no anomalous bank, so its
    scores are independent of any anomalous memories.
    """
    n = config.n_scales
    if task.mode == "composite":
        train_bundle = _load_checked(task.train_anomalous, config)
        if task.train_anomalous.mask_path is None:
            raise InsufficientDataError(
                f"class {task.class_name}: training bundle {task.train_anomalous.id} "
                f"has no mask"
            )
        mask = read_mask(
            task.train_anomalous.mask_path,
            train_bundle.image_width,
            train_bundle.image_height,
        )
        ref_bank = build_reference_bank([train_bundle], [mask], config.theta)
        anom_bank = build_anomalous_bank([train_bundle], [mask], config.theta)
        canonical = baseline_weights(n)
    else:
        if task.val_normal is None:
            raise InsufficientDataError(
                f"class {task.class_name}: winclip-compat mode needs a normal bundle"
            )
        val_bundle = _load_checked(task.val_normal, config)
        ref_bank = build_reference_bank([val_bundle], [None], config.theta)
        anom_bank = None
        canonical = winclip_weights(n)

    val_auroc: float | None = None
    if task.weight_source == "baseline":
        weights = canonical
    elif task.weight_source == "fixed":
        weights = check_weights(np.asarray(task.fixed_weights), 1 + 2 * n)
    else:
        pairs = _validation_pairs(task, config, ref_bank, anom_bank, states, workers)
        spec = config.sampling_spec(seed=task.seed)
        weights, val_auroc, _ = monte_carlo_search(pairs, spec, canonical, workers)

    if config.renormalize_empty_anomalous and anom_bank is not None:
        empty = tuple(anom_bank.is_empty(s) for s in config.scales)
        if any(empty):
            weights = redistribute_empty_scales(weights, empty)

    def score_one(entry: BundleEntry) -> float:
        bundle = _load_checked(entry, config)
        sc = score_vector(bundle, ref_bank, anom_bank, states, config.tau)
        return aggregate(sc, weights)

    scores = map_ordered(score_one, list(task.test), workers)
    labels = [e.label for e in task.test]
    return TaskResult(
        class_name=task.class_name,
        run_index=task.run_index,
        mode=task.mode,
        weight_source=task.weight_source,
        seed=task.seed,
        weights=tuple(float(w) for w in weights),
        val_auroc=val_auroc,
        image_ids=tuple(e.id for e in task.test),
        scores=tuple(scores),
        labels=tuple(labels),
        auroc=auroc(scores, labels),
    )


# ---------------------------------------------------------------------------
# aggregation and reports


def aggregate_runs(
    values: Sequence[float], confidence: float = 0.95
) -> tuple[float, float]:
    """Mean and normal-approximation CI half width over repeated runs.

    half_width = z((1 + confidence) / 2) * sample_sd / sqrt(n), and 0.0
    for a single run.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("aggregate_runs needs at least one value")
    if not np.all(np.isfinite(vals)):
        raise ValueError("run values must be finite")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    mean = float(vals.mean())
    if vals.size == 1:
        return mean, 0.0
    sd = float(vals.std(ddof=1))
    z = NormalDist().inv_cdf((1.0 + confidence) / 2.0)
    return mean, z * sd / math.sqrt(vals.size)


MEAN_ROW_NAME = "mean"
REPORT_CSV = "report.csv"
REPORT_JSON = "report.json"


def render_report(
    per_class: dict[str, list[TaskResult]],
    skipped: dict[str, str],
    cfg_hash: str,
    confidence: float = 0.95,
) -> tuple[str, dict]:
    """Render evaluation results as CSV text and a JSON-ready dict.

    One row per class plus a dataset mean row computed over per-run
    dataset means (each run's mean across classes), so its half width
    reflects run-to-run spread. Deterministic for equal inputs: no
    timestamps, floats via repr.
    """
    if not per_class:
        raise ValueError("no class results to report")
    classes = sorted(per_class)
    n_runs_set = {len(per_class[c]) for c in classes}
    if len(n_runs_set) != 1:
        raise ValueError(f"classes disagree on run count: {sorted(n_runs_set)}")
    n_runs = n_runs_set.pop()

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "mode", "mean_auroc", "ci_half_width", "n_runs", "weights_json"])
    json_classes: dict[str, dict] = {}
    for cls in classes:
        results = sorted(per_class[cls], key=lambda r: r.run_index)
        mean, hw = aggregate_runs([r.auroc for r in results], confidence)
        weights_json = json.dumps([list(r.weights) for r in results])
        writer.writerow([cls, results[0].mode, repr(mean), repr(hw), n_runs, weights_json])
        json_classes[cls] = {
            "mode": results[0].mode,
            "weight_source": results[0].weight_source,
            "n_runs": n_runs,
            "mean_auroc": mean,
            "ci_half_width": hw,
            "runs": [
                {
                    "run_index": r.run_index,
                    "auroc": r.auroc,
                    "val_auroc": r.val_auroc,
                    "seed": r.seed,
                    "n_test": len(r.labels),
                    "weights": list(r.weights),
                }
                for r in results
            ],
        }
    run_means = [
        float(np.mean([sorted(per_class[c], key=lambda r: r.run_index)[r_i].auroc for c in classes]))
        for r_i in range(n_runs)
    ]
    mean_mean, mean_hw = aggregate_runs(run_means, confidence)
    mode = next(iter(per_class.values()))[0].mode
    writer.writerow([MEAN_ROW_NAME, mode, repr(mean_mean), repr(mean_hw), n_runs, ""])
    payload = {
        "config_hash": cfg_hash,
        "confidence": confidence,
        "classes": json_classes,
        "mean": {"mean_auroc": mean_mean, "ci_half_width": mean_hw, "n_runs": n_runs},
        "skipped": dict(sorted(skipped.items())),
    }
    return buf.getvalue(), payload


def write_reports(
    per_class: dict[str, list[TaskResult]],
    skipped: dict[str, str],
    out_dir: str | Path,
    cfg_hash: str,
    confidence: float = 0.95,
) -> tuple[Path, Path, str]:
    """Write report.csv and report.json under out_dir; returns their paths
    and the CSV text."""
    csv_text, payload = render_report(per_class, skipped, cfg_hash, confidence)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / REPORT_CSV
        json_path = out / REPORT_JSON
        csv_path.write_text(csv_text, encoding="utf-8")
        json_path.write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise StorageError(f"cannot write reports under {out}: {exc}") from exc
    return csv_path, json_path, csv_text
