"""Image scoring: anomaly maps, score vectors, weighted aggregation.

Per scale s, the reference route scores each window by distance to the
reference bank, 0.5 * (1 - top1), and the anomalous route by proximity
to the anomalous bank, 0.5 * (1 + top1). Each scale contributes its max
cell. Together with the zero-shot text score this yields a score vector
(a_zs, a_n1..a_nS, a_p1..a_pS) that a weight vector collapses to one
image-level anomaly score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bundle_io import EmbeddingBundle, ScaleGrid, TextStatePair
from .errors import (
    DimensionMismatchError,
    EmptyScaleError,
    ScaleMismatchError,
)
from .memory import DEFAULT_BLOCK, MemoryBank, top1_batch

DEFAULT_TAU = 100.0


@dataclass(frozen=True)
class AnomalyMap:
    """Per-window scores for one scale; every cell lies in [0, 1]."""

    scale_px: int
    values: np.ndarray

    def max(self) -> float:
        if self.values.size == 0:
            raise ValueError("empty anomaly map")
        return float(self.values.max())


@dataclass(frozen=True)
class ScoreVector:
    """Component scores for one image, all in [0, 1].

    Component order is fixed: a_zs, then reference scores by ascending
    scale, then anomalous scores by ascending scale.
    """

    a_zs: float
    a_n: tuple[float, ...]
    a_p: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "a_zs", float(self.a_zs))
        object.__setattr__(self, "a_n", tuple(float(v) for v in self.a_n))
        object.__setattr__(self, "a_p", tuple(float(v) for v in self.a_p))
        if len(self.a_n) != len(self.a_p) or not self.a_n:
            raise DimensionMismatchError(
                f"need equal nonzero scale counts, got {len(self.a_n)} and {len(self.a_p)}"
            )
        for name, value in self.items():
            if not math.isfinite(value) or not 0.0 <= value <= 1.0:
                raise ValueError(f"component {name} = {value!r} outside [0, 1]")

    def items(self) -> list[tuple[str, float]]:
        out = [("a_zs", self.a_zs)]
        out += [(f"a_n{i + 1}", v) for i, v in enumerate(self.a_n)]
        out += [(f"a_p{i + 1}", v) for i, v in enumerate(self.a_p)]
        return out

    @property
    def n_scales(self) -> int:
        return len(self.a_n)

    def as_array(self) -> np.ndarray:
        return np.array([self.a_zs, *self.a_n, *self.a_p], dtype=np.float64)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ScoreVector":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 3 or arr.size % 2 == 0:
            raise DimensionMismatchError(
                f"score array must have odd length 1 + 2 * n_scales, got shape {arr.shape}"
            )
        n = (arr.size - 1) // 2
        return cls(
            a_zs=float(arr[0]),
            a_n=tuple(float(x) for x in arr[1 : 1 + n]),
            a_p=tuple(float(x) for x in arr[1 + n :]),
        )


def zero_shot_score(
    image_embedding: np.ndarray, states: TextStatePair, tau: float = DEFAULT_TAU
) -> float:
    """Softmax probability of the anomalous text state.

    With similarities s_a, s_n against the two states and temperature
    tau, returns exp(tau * s_a) / (exp(tau * s_a) + exp(tau * s_n)),
    evaluated in the numerically stable shifted form.
    """
    if tau <= 0.0 or not math.isfinite(tau):
        raise ValueError(f"tau must be a positive finite number, got {tau}")
    f = np.asarray(image_embedding, dtype=np.float64)
    if f.shape != (states.dim,):
        raise DimensionMismatchError(
            f"image embedding shape {f.shape} does not match text dim {states.dim}"
        )
    s_a = float(np.dot(f, states.unit_anomalous()))
    s_n = float(np.dot(f, states.unit_normal()))
    la, ln = tau * s_a, tau * s_n
    m = max(la, ln)
    ea, en = math.exp(la - m), math.exp(ln - m)
    return ea / (ea + en)


def reference_map(
    grid: ScaleGrid, bank: MemoryBank, block_size: int = DEFAULT_BLOCK
) -> AnomalyMap:
    """Distance of every window to its nearest reference patch.

    Raises:
        EmptyScaleError: the reference bank has no entries at this scale.
    """
    return _bank_map(grid, bank, sign=-1.0, block_size=block_size)


def anomalous_map(
    grid: ScaleGrid, bank: MemoryBank, block_size: int = DEFAULT_BLOCK
) -> AnomalyMap:
    """Proximity of every window to its nearest anomalous patch.

    Raises:
        EmptyScaleError: the anomalous bank has no entries at this scale.
        Callers wanting the empty-scale fallback handle it themselves
        (see score_vector).
    """
    return _bank_map(grid, bank, sign=1.0, block_size=block_size)


def _bank_map(grid: ScaleGrid, bank: MemoryBank, sign: float, block_size: int) -> AnomalyMap:
    if grid.scale_px not in bank.scales:
        raise ScaleMismatchError(f"bank has no scale {grid.scale_px}")
    if grid.dim != bank.dim:
        raise DimensionMismatchError(f"grid dim {grid.dim} != bank dim {bank.dim}")
    if bank.is_empty(grid.scale_px):
        raise EmptyScaleError(
            f"{bank.role.value} bank is empty at scale {grid.scale_px}"
        )
    queries = grid.unit().reshape(-1, grid.dim)
    sims, _ = top1_batch(queries, bank.entries[grid.scale_px], block_size)
    values = 0.5 * (1.0 + sign * sims)
    return AnomalyMap(scale_px=grid.scale_px, values=values.reshape(grid.rows, grid.cols))


def scale_score(amap: AnomalyMap) -> float:
    """Collapse a map to its maximum cell."""
    return amap.max()


def score_vector(
    bundle: EmbeddingBundle,
    reference_bank: MemoryBank,
    anomalous_bank: MemoryBank | None,
    states: TextStatePair,
    tau: float = DEFAULT_TAU,
    block_size: int = DEFAULT_BLOCK,
) -> ScoreVector:
    """Score one bundle against both banks and the text states.

    The anomalous bank may be None or empty at any scale; those scales
    contribute a_p = 0. The reference bank must cover every scale.
    """
    if bundle.scales != reference_bank.scales:
        raise ScaleMismatchError(
            f"bundle scales {bundle.scales} != reference bank scales {reference_bank.scales}"
        )
    if bundle.dim != reference_bank.dim:
        raise DimensionMismatchError(
            f"bundle dim {bundle.dim} != reference bank dim {reference_bank.dim}"
        )
    if anomalous_bank is not None:
        if bundle.scales != anomalous_bank.scales:
            raise ScaleMismatchError(
                f"bundle scales {bundle.scales} != anomalous bank scales "
                f"{anomalous_bank.scales}"
            )
        if bundle.dim != anomalous_bank.dim:
            raise DimensionMismatchError(
                f"bundle dim {bundle.dim} != anomalous bank dim {anomalous_bank.dim}"
            )
    a_zs = zero_shot_score(bundle.unit_global(), states, tau)
    a_n, a_p = [], []
    for grid in bundle.grids:
        a_n.append(scale_score(reference_map(grid, reference_bank, block_size)))
        if anomalous_bank is None or anomalous_bank.is_empty(grid.scale_px):
            a_p.append(0.0)
        else:
            a_p.append(scale_score(anomalous_map(grid, anomalous_bank, block_size)))
    return ScoreVector(a_zs=a_zs, a_n=tuple(a_n), a_p=tuple(a_p))


# ---------------------------------------------------------------------------
# weights and aggregation


def baseline_weights(n_scales: int = 4) -> np.ndarray:
    """Equal thirds split: 1/3 on a_zs, 1/3 spread over each bank route.

    Components: (1/3, then 1/(3 n) for each reference scale, then
    1/(3 n) for each anomalous scale). Sums to 1.
    """
    if n_scales < 1:
        raise ValueError(f"n_scales must be positive, got {n_scales}")
    per = 1.0 / (3.0 * n_scales)
    return np.array([1.0 / 3.0] + [per] * (2 * n_scales), dtype=np.float64)


def winclip_weights(n_scales: int = 4) -> np.ndarray:
    """Compatibility weighting: half on a_zs, half on the reference route.

    Anomalous components get weight 0, so the result never depends on
    the anomalous bank.
    """
    if n_scales < 1:
        raise ValueError(f"n_scales must be positive, got {n_scales}")
    per = 1.0 / (2.0 * n_scales)
    return np.array([0.5] + [per] * n_scales + [0.0] * n_scales, dtype=np.float64)


def check_weights(weights: np.ndarray, n_components: int) -> np.ndarray:
    """Validate a weight vector: right length, finite, nonnegative, not all zero."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size != n_components:
        raise DimensionMismatchError(
            f"weight vector must have {n_components} components, got shape {w.shape}"
        )
    if not np.all(np.isfinite(w)):
        raise ValueError("weight vector contains non-finite values")
    if np.any(w < 0.0):
        raise ValueError("weight vector contains negative values")
    if not np.any(w > 0.0):
        raise ValueError("weight vector is all zero")
    return w


def aggregate(sc: ScoreVector, weights: np.ndarray) -> float:
    """Weighted sum of the score components in their fixed order.

    Summation runs a_zs first, then reference scales ascending, then
    anomalous scales ascending, so equal inputs reproduce bit-equal
    outputs everywhere.
    """
    w = check_weights(weights, 1 + 2 * sc.n_scales)
    comps = sc.as_array()
    total = 0.0
    for c, wi in zip(comps, w):
        total += c * wi
    return float(total)


def redistribute_empty_scales(
    weights: np.ndarray, empty: tuple[bool, ...]
) -> np.ndarray:
    """Move anomalous-route weight mass off empty scales.

    Optional alternative to the default behavior (empty scales simply
    contribute zero). Mass from empty anomalous scales is spread over
    the nonempty anomalous components proportionally to their current
    weights, equally if those are all zero. With every anomalous scale
    empty the vector is returned unchanged.
    """
    n = len(empty)
    w = check_weights(weights, 1 + 2 * n).copy()
    anom = w[1 + n :]
    empty_arr = np.asarray(empty, dtype=bool)
    moved = float(anom[empty_arr].sum())
    if moved == 0.0 or empty_arr.all():
        return w
    keep = ~empty_arr
    anom[empty_arr] = 0.0
    base = anom[keep]
    if base.sum() > 0.0:
        anom[keep] = base + moved * base / base.sum()
    else:
        anom[keep] = moved / keep.sum()
    w[1 + n :] = anom
    return w
