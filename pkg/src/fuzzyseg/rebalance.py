"""Adaptive class rebalancing from pseudo-label frequencies.

Weights follow the median-frequency rule w_c = median(F) / (F_c + eps),
recomputed per batch from the fuzzy argmax counts, so rare classes are
boosted and dominant ones damped without any dataset-level statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pseudolabel import fuzzy_argmax

__all__ = ["ClassWeightVector", "class_frequencies", "class_weights"]


@dataclass(frozen=True)
class ClassWeightVector:
    """Per-class loss weights plus the frequencies they were derived from."""

    weights: np.ndarray      # (C,) float64, > 0
    frequencies: np.ndarray  # (C,) int64 pixel counts
    epsilon: float


def class_frequencies(fuzzy_maps: Sequence[np.ndarray],
                      valid_masks: Sequence[np.ndarray]) -> np.ndarray:
    """Count valid pixels per class over a batch, by fuzzy argmax.

    Each map is (C,H,W) with a matching (H,W) validity mask; classes absent
    from the batch get count 0.
    """
    maps = list(fuzzy_maps)
    masks = list(valid_masks)
    if not maps:
        raise ValueError("class_frequencies needs at least one map")
    if len(maps) != len(masks):
        raise ValueError(f"{len(maps)} maps but {len(masks)} masks")
    n_classes = maps[0].shape[0]
    counts = np.zeros(n_classes, dtype=np.int64)
    for fuzzy, valid in zip(maps, masks):
        if fuzzy.shape[0] != n_classes:
            raise ValueError("all maps must share the class count")
        v = np.asarray(valid, dtype=bool)
        if v.shape != fuzzy.shape[1:]:
            raise ValueError(f"mask shape {v.shape} does not match map {fuzzy.shape[1:]}")
        assign = fuzzy_argmax(fuzzy)
        counts += np.bincount(assign[v], minlength=n_classes)
    return counts


def class_weights(frequencies: np.ndarray, eps: float = 1e-6,
                  max_weight: float | None = None) -> ClassWeightVector:
    """Median-frequency weights w_c = median(F) / (F_c + eps).

    With an even class count the median is the mean of the two middle
    entries. Zero-frequency classes get median/eps, a deliberately large
    boost; `max_weight` optionally clips the result (the training loop
    passes its configured cap, oracles run uncapped).
    """
    freq = np.asarray(frequencies)
    if freq.ndim != 1 or freq.size < 1:
        raise ValueError("frequencies must be a non-empty 1D array")
    if np.any(freq < 0):
        raise ValueError("frequencies must be nonnegative")
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    freq = freq.astype(np.int64)
    median = np.median(freq.astype(np.float64))
    weights = median / (freq.astype(np.float64) + eps)
    if max_weight is not None:
        if max_weight <= 0.0:
            raise ValueError(f"max_weight must be positive, got {max_weight}")
        weights = np.minimum(weights, max_weight)
    return ClassWeightVector(weights=weights, frequencies=freq, epsilon=float(eps))
