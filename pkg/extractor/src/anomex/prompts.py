"""Prompt template sets and text state extraction.

A template set is a pair of prompt lists, one per object state, each
entry a format string taking the class name. The extracted state vector
is the normalized mean of the normalized prompt embeddings, so a state
described by a single prompt equals that prompt's embedding and
duplicate prompts change nothing.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyTemplate

TEMPLATE_SETS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "default": (
        (
            "a photo of a {}",
            "a photo of a flawless {}",
            "a photo of a perfect {}",
            "a photo of an unblemished {}",
            "a photo of a {} without defect",
            "a cropped photo of a {} in good condition",
            "a close-up photo of an intact {}",
        ),
        (
            "a photo of a damaged {}",
            "a photo of a broken {}",
            "a photo of a defective {}",
            "a photo of a {} with a flaw",
            "a photo of a {} with a defect",
            "a cropped photo of a damaged {}",
            "a close-up photo of a {} with visible damage",
        ),
    ),
    "minimal": (
        ("a photo of a normal {}",),
        ("a photo of an anomalous {}",),
    ),
}


def state_prompts(class_name: str, template_set: str) -> tuple[list[str], list[str]]:
    """Concrete (normal, anomalous) prompt lists for a class."""
    if template_set not in TEMPLATE_SETS:
        raise EmptyTemplate(
            f"unknown template set {template_set!r}; available: {sorted(TEMPLATE_SETS)}"
        )
    normal_t, anomalous_t = TEMPLATE_SETS[template_set]
    normal = [t.format(class_name) for t in normal_t]
    anomalous = [t.format(class_name) for t in anomalous_t]
    for state, prompts in (("normal", normal), ("anomalous", anomalous)):
        if not prompts:
            raise EmptyTemplate(f"template set {template_set!r} has no {state} prompts")
    return normal, anomalous


def _state_vector(prompts: list[str], encoder) -> np.ndarray:
    embeds = np.stack([encoder.encode_text(p) for p in prompts]).astype(np.float64)
    mean = embeds.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise EmptyTemplate("prompt embeddings for a state cancelled to zero")
    return (mean / norm).astype(np.float32)


def extract_text_states(
    class_name: str, template_set: str, encoder
) -> tuple[np.ndarray, np.ndarray]:
    """(normal, anomalous) unit state vectors for a class."""
    normal, anomalous = state_prompts(class_name, template_set)
    return _state_vector(normal, encoder), _state_vector(anomalous, encoder)
