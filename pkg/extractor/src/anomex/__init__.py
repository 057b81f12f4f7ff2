"""Image-to-bundle extractor for the few-shot anomaly scoring engine.

Turns images into the engine's on-disk inputs: embedding bundles with
per-scale window grids, per-class text state pairs, binary annotation
tensors, dataset manifests, and augmented validation copies.
"""

from .aeb import (
    GridSpec,
    read_tensor,
    write_bundle_dir,
    write_dataset_manifest,
    write_mask_tensor,
    write_tensor,
    write_text_states,
)
from .augment import AugmentedSample, Op, augment, sample_chain
from .config import AGGREGATIONS, AUG_KINDS, ExtractorConfig
from .encoders import ClipEncoder, ToyEncoder, get_encoder
from .errors import (
    EmptyTemplate,
    EncoderUnavailable,
    ExtractorError,
    LayoutError,
    UnsupportedResolution,
)
from .layouts import LAYOUT_NAMES, ImageRecord, discover
from .pipeline import (
    extract_bundle,
    extract_mask,
    load_image,
    load_mask,
    resize_image,
    resize_mask,
)
from .prompts import TEMPLATE_SETS, extract_text_states, state_prompts
from .windows import WindowPlan, plan_windows, pool_windows

__all__ = [
    "AGGREGATIONS",
    "AUG_KINDS",
    "AugmentedSample",
    "ClipEncoder",
    "EmptyTemplate",
    "EncoderUnavailable",
    "ExtractorConfig",
    "ExtractorError",
    "GridSpec",
    "ImageRecord",
    "LAYOUT_NAMES",
    "LayoutError",
    "Op",
    "TEMPLATE_SETS",
    "ToyEncoder",
    "UnsupportedResolution",
    "WindowPlan",
    "augment",
    "discover",
    "extract_bundle",
    "extract_mask",
    "extract_text_states",
    "get_encoder",
    "load_image",
    "load_mask",
    "plan_windows",
    "pool_windows",
    "read_tensor",
    "resize_image",
    "resize_mask",
    "sample_chain",
    "state_prompts",
    "write_bundle_dir",
    "write_dataset_manifest",
    "write_mask_tensor",
    "write_tensor",
    "write_text_states",
]

__version__ = "0.1.0"
