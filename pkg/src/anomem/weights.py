"""Monte-Carlo search for score-component weights.

Candidates are drawn around the baseline weighting from one of three
distributions and ranked by validation AUROC. Every candidate is a pure
function of (spec, candidate index), so traces are reproducible draw by
draw no matter the evaluation order or parallelism.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._concurrency import map_ordered
from .core import rng_for
from .errors import (
    DegenerateDistributionError,
    DegenerateValidationError,
    DimensionMismatchError,
    FormatError,
    StorageError,
)
from .scoring import ScoreVector, aggregate, baseline_weights, check_weights

DISTRIBUTIONS = ("uniform", "normal", "student-t")
_MAX_REJECTIONS = 100

ValidationPair = tuple[ScoreVector, int]


@dataclass(frozen=True)
class SamplingSpec:
    """How to draw weight candidates.

    uniform draws every component i.i.d. on [0, 1). normal draws each
    component at the baseline weight with sd = sd_factor * baseline.
    student-t uses the same location and scale with student_df degrees
    of freedom. Negative draws clamp to zero; all-zero vectors are
    rejected and redrawn, up to 100 attempts per candidate.
    """

    distribution: str
    n_samples: int = 100
    seed: int = 0
    sd_factor: float = 0.5
    student_df: float = 3.0
    include_baseline: bool = True
    n_scales: int = 4

    def __post_init__(self) -> None:
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(
                f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}"
            )
        if self.n_samples < 0:
            raise ValueError(f"n_samples must be nonnegative, got {self.n_samples}")
        if self.sd_factor < 0.0:
            raise ValueError(f"sd_factor must be nonnegative, got {self.sd_factor}")
        if self.student_df <= 0.0:
            raise ValueError(f"student_df must be positive, got {self.student_df}")
        if self.n_scales < 1:
            raise ValueError(f"n_scales must be positive, got {self.n_scales}")

    @property
    def n_components(self) -> int:
        return 1 + 2 * self.n_scales


def sample_weights(
    spec: SamplingSpec, k: int, baseline: np.ndarray | None = None
) -> np.ndarray:
    """Draw candidate k. Deterministic in (spec, k, baseline).

    Each candidate gets its own derived stream, so drawing candidate 3
    twice, or out of order, yields identical vectors.

    Raises:
        DegenerateDistributionError: 100 consecutive all-zero draws.
    """
    if baseline is None:
        baseline = baseline_weights(spec.n_scales)
    baseline = check_weights(baseline, spec.n_components)
    gen = rng_for(spec.seed, f"weights/{k}")
    scale = spec.sd_factor * baseline
    for _ in range(_MAX_REJECTIONS):
        if spec.distribution == "uniform":
            w = gen.random(spec.n_components)
        elif spec.distribution == "normal":
            w = gen.normal(loc=baseline, scale=scale)
        else:
            if not scale.any():
                w = baseline.copy()
            else:
                w = baseline + scale * gen.standard_t(spec.student_df, size=spec.n_components)
        w = np.maximum(w, 0.0)
        if np.all(np.isfinite(w)) and np.any(w > 0.0):
            return w
    raise DegenerateDistributionError(
        f"candidate {k}: {_MAX_REJECTIONS} consecutive degenerate draws "
        f"from {spec.distribution}"
    )


def candidate_weights(
    spec: SamplingSpec, baseline: np.ndarray | None = None
) -> list[np.ndarray]:
    """The full ordered candidate list: baseline first when included."""
    if baseline is None:
        baseline = baseline_weights(spec.n_scales)
    out = [check_weights(baseline, spec.n_components).copy()] if spec.include_baseline else []
    out.extend(sample_weights(spec, k, baseline) for k in range(spec.n_samples))
    return out


@dataclass(frozen=True)
class TraceEntry:
    index: int
    weights: tuple[float, ...]
    val_auroc: float


def select_best(
    val: Sequence[ValidationPair],
    candidates: Sequence[np.ndarray],
    workers: int = 1,
) -> tuple[int, np.ndarray, float, list[TraceEntry]]:
    """Rank candidates by validation AUROC; ties go to the earliest.

    Returns (index, weights, auroc, trace ordered by candidate index).

    Raises:
        DegenerateValidationError: validation labels hold one class.
    """
    # local import: evaluation imports this module at top level
    from .evaluation import auroc

    if not candidates:
        raise ValueError("no candidates to evaluate")
    labels = [int(label) for _, label in val]
    if len(set(labels)) < 2:
        raise DegenerateValidationError(
            "validation set must contain both classes to rank candidates"
        )
    vectors = [sc for sc, _ in val]

    def evaluate(w: np.ndarray) -> float:
        scores = [aggregate(sc, w) for sc in vectors]
        return auroc(scores, labels)

    aurocs = map_ordered(evaluate, list(candidates), workers)
    best_index = int(np.argmax(aurocs))
    trace = [
        TraceEntry(index=i, weights=tuple(float(x) for x in w), val_auroc=a)
        for i, (w, a) in enumerate(zip(candidates, aurocs))
    ]
    return best_index, np.asarray(candidates[best_index], dtype=np.float64), aurocs[best_index], trace


def monte_carlo_search(
    val: Sequence[ValidationPair],
    spec: SamplingSpec,
    baseline: np.ndarray | None = None,
    workers: int = 1,
) -> tuple[np.ndarray, float, list[TraceEntry]]:
    """Draw spec.n_samples candidates (plus the baseline when included)
    and keep the one with the best validation AUROC.

    With include_baseline the result can never rank below the baseline
    weighting on the validation set.
    """
    candidates = candidate_weights(spec, baseline)
    _, best_w, best_a, trace = select_best(val, candidates, workers)
    return best_w, best_a, trace


# ---------------------------------------------------------------------------
# serialization


def write_weights_json(weights: np.ndarray, path: str | Path) -> None:
    w = np.asarray(weights, dtype=np.float64)
    try:
        Path(path).write_text(json.dumps([float(x) for x in w]) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write weights file {path}: {exc}") from exc


def read_weights_json(path: str | Path, n_components: int) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read weights file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, list) or len(data) != n_components:
        raise FormatError(
            f"{path}: weights file must hold exactly {n_components} numbers"
        )
    try:
        return check_weights(np.array(data, dtype=np.float64), n_components)
    except (ValueError, DimensionMismatchError, TypeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def trace_header(n_scales: int) -> list[str]:
    names = ["w_zs"]
    names += [f"w_n{i + 1}" for i in range(n_scales)]
    names += [f"w_p{i + 1}" for i in range(n_scales)]
    return ["candidate_index", *names, "val_auroc"]


def write_trace_csv(trace: Sequence[TraceEntry], path: str | Path, n_scales: int) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(trace_header(n_scales))
            for entry in trace:
                writer.writerow(
                    [entry.index, *[repr(w) for w in entry.weights], repr(entry.val_auroc)]
                )
    except OSError as exc:
        raise StorageError(f"cannot write trace file {path}: {exc}") from exc
