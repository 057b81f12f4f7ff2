"""Engine configuration, file loading, and the deterministic config hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, StorageError
from .weights import DISTRIBUTIONS, SamplingSpec

MODES = ("composite", "winclip-compat")
WEIGHT_SOURCES = ("baseline", "validated", "fixed")
DEFAULT_SCALES = (16, 32, 48, 112)


@dataclass(frozen=True)
class EngineConfig:
    """Every knob the scoring and evaluation pipeline honors.

    Precedence when assembling one: command-line flags, then config
    file values, then these defaults.
    """

    scales: tuple[int, ...] = DEFAULT_SCALES
    theta: float = 0.25
    tau: float = 100.0
    mode: str = "composite"
    weight_source: str = "baseline"
    distribution: str = "uniform"
    n_samples: int = 100
    sd_factor: float = 0.5
    student_df: float = 3.0
    include_baseline: bool = True
    seed: int = 0
    runs_per_class: int = 3
    max_test: int = 100
    threads: int = 0
    renormalize_empty_anomalous: bool = False
    text_states: str | None = None
    confidence: float = 0.95

    def __post_init__(self) -> None:
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        if not self.scales or any(s < 1 for s in self.scales):
            raise ValueError(f"scales must be positive, got {self.scales}")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ValueError(f"scales must be strictly increasing, got {self.scales}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        if self.tau <= 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.weight_source not in WEIGHT_SOURCES:
            raise ValueError(
                f"weight source must be one of {WEIGHT_SOURCES}, got {self.weight_source!r}"
            )
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(
                f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}"
            )
        if self.n_samples < 0:
            raise ValueError(f"n_samples must be nonnegative, got {self.n_samples}")
        if self.runs_per_class < 1:
            raise ValueError(f"runs_per_class must be positive, got {self.runs_per_class}")
        if self.max_test < 2:
            raise ValueError(f"max_test must be at least 2, got {self.max_test}")
        if self.threads < 0:
            raise ValueError(f"threads must be nonnegative, got {self.threads}")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError(f"confidence must be in (0, 1), got {self.confidence}")

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    def sampling_spec(self, seed: int | None = None) -> SamplingSpec:
        return SamplingSpec(
            distribution=self.distribution,
            n_samples=self.n_samples,
            seed=self.seed if seed is None else seed,
            sd_factor=self.sd_factor,
            student_df=self.student_df,
            include_baseline=self.include_baseline,
            n_scales=self.n_scales,
        )


def config_hash(config: EngineConfig) -> str:
    """Stable hash identifying a configuration in reports."""
    payload = dataclasses.asdict(config)
    payload["scales"] = list(config.scales)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_config_file(path: str | Path) -> dict:
    """Read a JSON config file into a plain dict of overrides."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: config file must hold a JSON object")
    known = {f.name for f in dataclasses.fields(EngineConfig)}
    unknown = set(data) - known
    if unknown:
        raise FormatError(f"{path}: unknown config keys {sorted(unknown)}")
    return data


def make_config(
    file_values: dict | None = None, overrides: dict | None = None
) -> EngineConfig:
    """Merge defaults, config-file values, and explicit overrides (strongest)."""
    merged: dict = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "scales" in merged:
        merged["scales"] = tuple(merged["scales"])
    try:
        return EngineConfig(**merged)
    except TypeError as exc:
        raise FormatError(f"bad config: {exc}") from exc
