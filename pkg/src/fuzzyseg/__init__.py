"""Semi-supervised semantic segmentation with fuzzy pseudo-labels.

A mean-teacher harness over a small convolutional segmentation network,
written directly on numpy with its own reverse-mode autodiff (see
`fuzzyseg.tensorkit`). The teacher's soft predictions become fuzzy top-K
pseudo-labels; pixels are weighted by normalized-entropy confidence,
classes are rebalanced by median-frequency weights, and a prototype
contrastive term regularizes the embedding space. Everything runs on a
synthetic long-tailed shape benchmark at desk scale.
"""

from .harness import TrainConfig, run_ablation, run_training
from .pseudolabel import fuzzy_labels, normalized_entropy, pixel_weights
from .rebalance import class_weights

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "run_training",
    "run_ablation",
    "fuzzy_labels",
    "normalized_entropy",
    "pixel_weights",
    "class_weights",
    "__version__",
]
