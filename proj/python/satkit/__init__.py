"""Structure-aware fine-tuning toolkit.

Tree distance extraction from code, debiased Sinkhorn structure loss,
and a tiny trainable transformer with an attention-structure probe.
"""

from satkit._core import (
    Error,
    align,
    build_toy_corpus,
    distances,
    exact_match,
    probe_checkpoints,
    sinkhorn_divergence,
    smoothed_bleu4,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Error",
    "align",
    "build_toy_corpus",
    "distances",
    "exact_match",
    "probe_checkpoints",
    "sinkhorn_divergence",
    "smoothed_bleu4",
    "train",
]
