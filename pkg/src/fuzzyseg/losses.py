"""Training objectives: supervised CE, weighted consistency KL, and the
prototype contrastive term.

All losses consume student probability maps as graph tensors and teacher
side quantities (fuzzy targets, reliability weights, class weights,
prototypes) as plain arrays, so gradients flow only through the student.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pseudolabel import fuzzy_argmax
from .tensorkit import Tensor, cosine_rows, masked_take, take_channel

__all__ = [
    "LossBreakdown",
    "PrototypeSet",
    "PROB_FLOOR",
    "supervised_ce",
    "unsupervised_kl",
    "prototype_selection",
    "compute_prototypes",
    "contrastive_loss",
    "total_loss",
]

PROB_FLOOR = 1e-12  # probabilities are clamped here before any logarithm
IGNORE = 255


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar loss components of one iteration, for logging and the CSV."""

    loss_s: float
    loss_u: float
    loss_c: float
    loss_total: float
    n_valid: int
    lambda_u: float
    lambda_c: float


@dataclass(frozen=True)
class PrototypeSet:
    """Per-class mean embeddings over the selected reliable pixels.

    Computed fresh each step from detached embeddings (stop-gradient);
    absent classes have present=False and a zero vector.
    """

    prototypes: np.ndarray  # (C, D) float64
    counts: np.ndarray      # (C,) int64 selected pixels per class
    present: np.ndarray     # (C,) bool


def _check_probs_tensor(probs: Tensor, name: str) -> None:
    if probs.data.ndim != 4:
        raise ValueError(f"{name} must be (B,C,H,W), got shape {probs.shape}")


def supervised_ce(student_probs: Tensor, labels: np.ndarray,
                  ignore_value: int = IGNORE) -> tuple[Tensor, int]:
    """Mean cross-entropy over non-ignored pixels.

    Returns the scalar loss and the pixel count; an all-ignored batch yields
    (0, 0) so the caller can flag it rather than divide by zero.
    """
    _check_probs_tensor(student_probs, "student_probs")
    y = np.asarray(labels)
    b, c, h, w = student_probs.shape
    if y.shape != (b, h, w):
        raise ValueError(f"labels shape {y.shape} does not match probs {(b, h, w)}")
    valid = y != ignore_value
    if y[valid].size and (y[valid].min() < 0 or y[valid].max() >= c):
        raise ValueError("label id out of class range")
    n = int(valid.sum())
    if n == 0:
        return Tensor(0.0), 0
    safe = np.where(valid, y, 0).astype(np.int64)
    log_p = take_channel(student_probs.clamp_min(PROB_FLOOR).log(), safe)
    picked = log_p * valid.astype(log_p.dtype)
    return -picked.sum() * (1.0 / n), n


def unsupervised_kl(fuzzy: np.ndarray, student_probs: Tensor, weight: np.ndarray,
                    valid: np.ndarray, class_w: np.ndarray) -> tuple[Tensor, int]:
    """Reliability- and class-weighted KL from fuzzy targets to the student.

    Per valid pixel the term is  W * w_{a} * sum_c f_c log(f_c / p_c)  with
    a the pixel's fuzzy argmax class, averaged over the count of valid
    pixels. Each pixel contributes a nonnegative multiple of a KL
    divergence, so the total is nonnegative and minimized exactly when the
    student matches the fuzzy target on every weighted pixel.
    """
    _check_probs_tensor(student_probs, "student_probs")
    b, c, h, w = student_probs.shape
    f = np.asarray(fuzzy, dtype=np.float64)
    if f.shape != (b, c, h, w):
        raise ValueError(f"fuzzy shape {f.shape} does not match student {(b, c, h, w)}")
    wmap = np.asarray(weight, dtype=np.float64)
    vmask = np.asarray(valid)
    if wmap.shape != (b, h, w) or vmask.shape != (b, h, w):
        raise ValueError("weight and valid must be (B,H,W)")
    cw = np.asarray(class_w, dtype=np.float64)
    if cw.shape != (c,):
        raise ValueError(f"class weights must be ({c},), got {cw.shape}")
    if np.any(cw < 0.0) or np.any(wmap < 0.0):
        raise ValueError("weights must be nonnegative")

    n_valid = int(np.count_nonzero(vmask))
    if n_valid == 0:
        return Tensor(0.0), 0

    assign = np.stack([fuzzy_argmax(f[i]) for i in range(b)])
    coeff = vmask.astype(np.float64) * wmap * cw[assign]      # (B,H,W)
    # constant part: sum of coeff * f log f with 0 log 0 = 0
    flogf = np.where(f > 0.0, f * np.log(np.where(f > 0.0, f, 1.0)), 0.0)
    const_part = float((coeff[:, None] * flogf).sum())
    log_student = student_probs.clamp_min(PROB_FLOOR).log()
    cross = (log_student * (coeff[:, None] * f)).sum()
    return (const_part - cross) * (1.0 / n_valid), n_valid


def prototype_selection(weight: np.ndarray, valid: np.ndarray,
                        threshold: float = 0.5) -> np.ndarray:
    """Reliable-pixel mask: weight strictly above threshold and valid."""
    w = np.asarray(weight, dtype=np.float64)
    v = np.asarray(valid, dtype=bool)
    if w.shape != v.shape:
        raise ValueError("weight and valid shapes differ")
    return (w > threshold) & v


def compute_prototypes(embeddings: Tensor, assignments: np.ndarray,
                       selected: np.ndarray, n_classes: int) -> PrototypeSet:
    """Mean embedding per class over the selected pixels, detached."""
    e = embeddings.data
    if e.ndim != 4:
        raise ValueError("embeddings must be (B,D,H,W)")
    a = np.asarray(assignments, dtype=np.int64)
    sel = np.asarray(selected, dtype=bool)
    if a.shape != (e.shape[0],) + e.shape[2:] or sel.shape != a.shape:
        raise ValueError("assignments/selected must be (B,H,W)")
    if sel.any() and (a[sel].min() < 0 or a[sel].max() >= n_classes):
        raise ValueError("assignment id out of class range")
    d = e.shape[1]
    protos = np.zeros((n_classes, d), dtype=np.float64)
    counts = np.zeros(n_classes, dtype=np.int64)
    vectors = e.transpose(0, 2, 3, 1)[sel].astype(np.float64)  # (N, D)
    labels = a[sel]
    np.add.at(protos, labels, vectors)
    counts += np.bincount(labels, minlength=n_classes)
    present = counts > 0
    protos[present] /= counts[present, None]
    return PrototypeSet(prototypes=protos, counts=counts, present=present)


def contrastive_loss(embeddings: Tensor, assignments: np.ndarray,
                     selected: np.ndarray, prototypes: PrototypeSet,
                     norm_floor: float = 1e-3) -> tuple[Tensor, int]:
    """Mean cosine distance of selected pixel embeddings to their class prototype.

    Per present class: mean over its pixels of 1 - cos(f_i, proto_c), then
    averaged over present classes. Prototypes are constants, so gradients
    only pull pixel embeddings toward them. Pixels whose embedding norm is
    below `norm_floor` are skipped: after a relu their direction is pure
    noise and the cosine is undefined in the limit. Returns (0, 0) when no
    class survives. Each term lies in [0, 2].
    """
    a = np.asarray(assignments, dtype=np.int64)
    sel = np.asarray(selected, dtype=bool)
    sel = sel & (np.linalg.norm(embeddings.data, axis=1) > norm_floor)
    terms = []
    for cid in np.flatnonzero(prototypes.present):
        mask_c = sel & (a == cid)
        n_c = int(np.count_nonzero(mask_c))
        if n_c == 0:
            continue
        rows = masked_take(embeddings, mask_c)
        target = np.broadcast_to(prototypes.prototypes[cid], rows.shape)
        cos = cosine_rows(rows, target)
        terms.append((1.0 - cos).sum() * (1.0 / n_c))
    if not terms:
        return Tensor(0.0), 0
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms)), len(terms)


def total_loss(loss_s: Tensor, loss_u: Tensor, loss_c: Tensor,
               lambda_u: float, lambda_c: float) -> Tensor:
    """Weighted sum L_s + lambda_u * L_u + lambda_c * L_c."""
    if lambda_u < 0.0 or lambda_c < 0.0:
        raise ValueError("loss weights must be nonnegative")
    return loss_s + lambda_u * loss_u + lambda_c * loss_c
