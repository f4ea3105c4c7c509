"""Fuzzy pseudo-labels and entropy-based pixel reliability.

A teacher probability map is converted into a soft target supported on each
pixel's top-K classes (probability mass renormalized over that support), and
every pixel gets a reliability weight 1 - H from its normalized entropy H,
zeroed above a confidence threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FuzzyLabelMap",
    "PixelWeightMap",
    "fuzzy_labels",
    "fuzzy_argmax",
    "normalized_entropy",
    "pixel_weights",
    "weight_map_from_probs",
]

_SUM_TOL = 1e-6


def _check_probs(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 3:
        raise ValueError(f"expected a (C,H,W) probability map, got shape {p.shape}")
    if p.shape[0] < 1:
        raise ValueError("probability map needs at least one class channel")
    if np.any(p < 0.0):
        raise ValueError("probabilities must be nonnegative")
    sums = p.sum(axis=0)
    if np.max(np.abs(sums - 1.0)) > _SUM_TOL:
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"per-pixel sums deviate from 1 by {worst:.3e} (> {_SUM_TOL:.0e})")
    return p


@dataclass(frozen=True)
class FuzzyLabelMap:
    """Per-pixel soft targets supported on at most `support_size` classes."""

    probs: np.ndarray  # (C, H, W), each pixel sums to 1
    support_size: int

    def argmax(self) -> np.ndarray:
        return fuzzy_argmax(self.probs)


@dataclass(frozen=True)
class PixelWeightMap:
    """Reliability weights plus the entropy they came from and a validity mask."""

    weight: np.ndarray   # (H, W) in [0, 1]
    entropy: np.ndarray  # (H, W) in [0, 1]
    valid: np.ndarray    # (H, W) bool, augmentation validity


def fuzzy_labels(probs: np.ndarray, k: int) -> np.ndarray:
    """Renormalize each pixel's top-k probabilities; other classes get 0.

    Ties at the support boundary resolve toward the lower class index. The
    result is a valid distribution per pixel: the top-k mass of a valid
    distribution is at least k/C > 0, so the renormalizer never vanishes.
    """
    p = _check_probs(probs)
    c = p.shape[0]
    if not 1 <= k <= c:
        raise ValueError(f"k={k} out of range for {c} classes")
    if k == c:
        return p
    # stable argsort of the negated map: descending value, ascending index on ties
    order = np.argsort(-p, axis=0, kind="stable")
    support = np.zeros_like(p, dtype=bool)
    np.put_along_axis(support, order[:k], True, axis=0)
    masked = np.where(support, p, 0.0)
    return masked / masked.sum(axis=0, keepdims=True)


def fuzzy_argmax(fuzzy: np.ndarray) -> np.ndarray:
    """Hard assignment per pixel; ties resolve to the lower class index."""
    f = np.asarray(fuzzy)
    if f.ndim != 3:
        raise ValueError(f"expected a (C,H,W) map, got shape {f.shape}")
    return np.argmax(f, axis=0).astype(np.int64)


def normalized_entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy scaled by 1/log(C) so the range is [0, 1].

    Zero probabilities contribute zero (the 0 log 0 = 0 convention); tiny
    negative rounding is clipped away.
    """
    p = _check_probs(probs)
    if p.shape[0] < 2:
        raise ValueError("normalized entropy needs at least two classes")
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    h = -terms.sum(axis=0) / np.log(p.shape[0])
    return np.clip(h, 0.0, 1.0)


def pixel_weights(entropy: np.ndarray, threshold: float = 0.7) -> np.ndarray:
    """Reliability weight (1 - H) for pixels with H <= threshold, else 0."""
    h = np.asarray(entropy, dtype=np.float64)
    if np.any(h < 0.0) or np.any(h > 1.0):
        raise ValueError("entropy values must lie in [0, 1]")
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    return np.where(h <= threshold, 1.0 - h, 0.0)


def weight_map_from_probs(probs: np.ndarray, threshold: float,
                          valid: np.ndarray | None = None) -> PixelWeightMap:
    """Bundle entropy, reliability weight and validity for one teacher map."""
    h = normalized_entropy(probs)
    if valid is None:
        valid = np.ones(h.shape, dtype=bool)
    return PixelWeightMap(weight=pixel_weights(h, threshold), entropy=h,
                          valid=np.asarray(valid, dtype=bool))
