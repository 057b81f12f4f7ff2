"""Encoder-agnostic few-shot anomaly scoring over embedding bundles."""

from .bundle_io import (
    AnnotationMask,
    EmbeddingBundle,
    ScaleGrid,
    TextStatePair,
    read_bundle,
    read_mask,
    read_tensor,
    read_text_states,
    write_bundle,
    write_tensor,
    write_text_states,
)
from .config import EngineConfig, config_hash
from .core import RngStream, cosine, normalize, rng_for
from .errors import (
    AnomemError,
    DegenerateDistributionError,
    DegenerateLabelsError,
    DegenerateValidationError,
    DimensionMismatchError,
    EmptyBankError,
    EmptyScaleError,
    FormatError,
    GeometryError,
    InsufficientDataError,
    IntegrityError,
    NoAnomalousPixelsError,
    NormalizationError,
    ScaleMismatchError,
    StorageError,
    ZeroVectorError,
)
from .evaluation import (
    BundleEntry,
    DatasetManifest,
    TaskResult,
    TaskSpec,
    aggregate_runs,
    auroc,
    build_tasks,
    load_dataset_manifest,
    run_task,
    write_reports,
)
from .memory import (
    BankRole,
    MemoryBank,
    PatchLabel,
    assign_patch_labels,
    build_anomalous_bank,
    build_reference_bank,
    load_bank,
    save_bank,
    top1_batch,
    top1_similarity,
)
from .scoring import (
    AnomalyMap,
    ScoreVector,
    aggregate,
    anomalous_map,
    baseline_weights,
    redistribute_empty_scales,
    reference_map,
    scale_score,
    score_vector,
    winclip_weights,
    zero_shot_score,
)
from .weights import (
    SamplingSpec,
    TraceEntry,
    candidate_weights,
    monte_carlo_search,
    read_weights_json,
    sample_weights,
    select_best,
    write_trace_csv,
    write_weights_json,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationMask",
    "AnomalyMap",
    "AnomemError",
    "BankRole",
    "BundleEntry",
    "DatasetManifest",
    "DegenerateDistributionError",
    "DegenerateLabelsError",
    "DegenerateValidationError",
    "DimensionMismatchError",
    "EmbeddingBundle",
    "EmptyBankError",
    "EmptyScaleError",
    "EngineConfig",
    "FormatError",
    "GeometryError",
    "InsufficientDataError",
    "IntegrityError",
    "MemoryBank",
    "NoAnomalousPixelsError",
    "NormalizationError",
    "ScaleMismatchError",
    "StorageError",
    "ZeroVectorError",
    "PatchLabel",
    "RngStream",
    "SamplingSpec",
    "ScaleGrid",
    "ScoreVector",
    "TaskResult",
    "TaskSpec",
    "TextStatePair",
    "TraceEntry",
    "aggregate",
    "aggregate_runs",
    "anomalous_map",
    "assign_patch_labels",
    "auroc",
    "baseline_weights",
    "build_anomalous_bank",
    "build_reference_bank",
    "build_tasks",
    "candidate_weights",
    "config_hash",
    "cosine",
    "load_bank",
    "load_dataset_manifest",
    "monte_carlo_search",
    "normalize",
    "read_bundle",
    "read_mask",
    "read_tensor",
    "read_text_states",
    "read_weights_json",
    "redistribute_empty_scales",
    "reference_map",
    "rng_for",
    "run_task",
    "sample_weights",
    "save_bank",
    "scale_score",
    "score_vector",
    "select_best",
    "top1_batch",
    "top1_similarity",
    "winclip_weights",
    "write_bundle",
    "write_reports",
    "write_tensor",
    "write_text_states",
    "write_trace_csv",
    "write_weights_json",
    "zero_shot_score",
]
