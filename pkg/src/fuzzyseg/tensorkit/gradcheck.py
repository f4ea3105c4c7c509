"""Finite-difference oracle for the backward pass.

Every differentiable path in the package is validated against central
differences computed from forward evaluations only, so the check shares no
code with the thing it checks.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor

__all__ = ["finite_diff_grad_check", "central_difference_grad"]


def central_difference_grad(f: Callable[[Tensor], Tensor], x: np.ndarray,
                            step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x0 = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp.flat[i] += step
        xm = x0.copy()
        xm.flat[i] -= step
        fp = f(Tensor(xp)).item()
        fm = f(Tensor(xm)).item()
        grad.flat[i] = (fp - fm) / (2.0 * step)
    return grad


def finite_diff_grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray,
                           step: float = 1e-5) -> float:
    """Max relative error between backward() gradients and central differences.

    `f` must map a Tensor to a scalar Tensor and be evaluable at perturbed
    copies of `x`. The error at each coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) and the maximum
    over coordinates is returned.
    """
    x0 = np.asarray(x, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise ValueError("finite_diff_grad_check needs a scalar-valued function")
    if not np.isfinite(out.item()):
        raise FloatingPointError("function value is not finite at the base point")
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)
    numeric = central_difference_grad(f, x0, step)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        raise FloatingPointError("non-finite gradient during check")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
