"""Dense float tensors with reverse-mode automatic differentiation.

The array substrate is numpy; the differentiation machinery is local. Each
op returns a fresh ``Tensor`` whose ``_backward`` closure knows how to push
the output gradient to the inputs, and ``backward()`` walks the recorded
graph once in reverse topological order.

The primitive set is deliberately closed: elementwise arithmetic, exp/log,
relu, lower clamping, reductions, matrix multiply, zero-padded 2D
convolution (any positive stride), nearest/bilinear resampling, per-pixel
channel gather, masked pixel selection, row-wise cosine similarity, softmax
and concatenation. Everything else in the package is built from these.

Tensors hold 64-bit floats unless constructed from float32 data (the fast
training path). Ops never mutate their inputs, and outputs of any public
operation are finite whenever the inputs are (log and division require the
caller to keep arguments in range; probabilities are clamped first).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ComputeGraph",
    "as_tensor",
    "concat",
    "conv2d",
    "cosine_rows",
    "masked_take",
    "matmul",
    "softmax",
    "take_channel",
    "topk_indices",
    "upsample_bilinear",
    "upsample_nearest",
    "assert_all_finite",
]

_FLOATS = (np.float32, np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense array plus an optional gradient and a tape entry.

    ``requires_grad`` marks leaves (parameters); derived nodes inherit it
    from their inputs. ``grad`` accumulates during ``backward`` and is reset
    by assigning ``None``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOATS:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accum(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad), self.data.shape)
        grad = grad.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        """Reverse-mode pass from a scalar root.

        The tape is single-use: after the sweep every interior node is cut
        loose (closures and parent links cleared) so the whole graph frees
        by reference counting instead of waiting for the cycle collector.
        Leaf gradients survive; running backward on the same root twice is
        a no-op graph walk over leaves only.
        """
        if self.data.size != 1:
            raise ValueError("backward() only supports scalar roots")
        ComputeGraph.from_root(self).run_backward(self)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return _add(self, as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return _mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return _add(self, -as_tensor(other))

    def __rsub__(self, other):
        return _add(as_tensor(other), -self)

    def __truediv__(self, other):
        return _div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return _div(as_tensor(other), self)

    # -- elementwise methods --------------------------------------------

    def exp(self) -> "Tensor":
        out = _node(np.exp(self.data), (self,))

        def backward():
            self._accum(out.grad * out.data)

        out._backward = backward
        return out

    def log(self) -> "Tensor":
        out = _node(np.log(self.data), (self,))

        def backward():
            self._accum(out.grad / self.data)

        out._backward = backward
        return out

    def relu(self) -> "Tensor":
        out = _node(np.maximum(self.data, 0.0), (self,))

        def backward():
            self._accum(out.grad * (self.data > 0.0))

        out._backward = backward
        return out

    def clamp_min(self, floor: float) -> "Tensor":
        """Lower clamp; gradient passes only where the input is unclamped."""
        out = _node(np.maximum(self.data, floor), (self,))

        def backward():
            self._accum(out.grad * (self.data >= floor))

        out._backward = backward
        return out

    # -- reductions and shape -------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        axes = _normalize_axes(axis, self.data.ndim)

        def backward():
            g = np.asarray(out.grad)
            if not keepdims and axes is not None:
                for ax in sorted(axes):
                    g = np.expand_dims(g, ax)
            self._accum(np.broadcast_to(g, self.data.shape))

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        axes = _normalize_axes(axis, self.data.ndim)
        if axes is None:
            count = self.data.size
        else:
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))

        def backward():
            self._accum(out.grad.reshape(self.data.shape))

        out._backward = backward
        return out


class ComputeGraph:
    """Reverse-topologically ordered view of the nodes reachable from a root.

    Only gradient-carrying nodes are recorded; constants never enter the
    tape. Each node appears exactly once, parents before children.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputeGraph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n._prev and n.requires_grad]

    def run_backward(self, root: Tensor) -> None:
        root.grad = np.ones_like(root.data)
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward()
        # single-use tape: break the closure/parent cycles so the graph and
        # its captured arrays free immediately by refcount
        for node in self.nodes:
            node._backward = None
            node._prev = ()


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
    return out


def _normalize_axes(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim)) if ndim else None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def assert_all_finite(t: Tensor, what: str = "tensor") -> None:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values in {what}")


# -- arithmetic ----------------------------------------------------------


def _add(a: Tensor, b: Tensor) -> Tensor:
    out = _node(a.data + b.data, (a, b))

    def backward():
        a._accum(out.grad)
        b._accum(out.grad)

    out._backward = backward
    return out


def _mul(a: Tensor, b: Tensor) -> Tensor:
    out = _node(a.data * b.data, (a, b))

    def backward():
        a._accum(out.grad * b.data)
        b._accum(out.grad * a.data)

    out._backward = backward
    return out


def _div(a: Tensor, b: Tensor) -> Tensor:
    out = _node(a.data / b.data, (a, b))

    def backward():
        a._accum(out.grad / b.data)
        b._accum(-out.grad * a.data / (b.data * b.data))

    out._backward = backward
    return out


# -- linear algebra ------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2D matrix product (m,k) @ (k,n)."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects rank-2 operands")
    out = _node(a.data @ b.data, (a, b))

    def backward():
        a._accum(out.grad @ b.data.T)
        b._accum(a.data.T @ out.grad)

    out._backward = backward
    return out


def softmax(t: Tensor, axis: int) -> Tensor:
    """Stabilized softmax along `axis`; rows sum to 1 for any finite input."""
    if not -t.data.ndim <= axis < t.data.ndim:
        raise ValueError(f"softmax axis {axis} out of range for shape {t.shape}")
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _node(y, (t,))

    def backward():
        g = out.grad
        inner = (g * y).sum(axis=axis, keepdims=True)
        t._accum(y * (g - inner))

    out._backward = backward
    return out


def topk_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, by descending value then ascending index."""
    v = np.asarray(values)
    if v.ndim != 1:
        raise ValueError("topk_indices expects a 1D array")
    if not 1 <= k <= v.size:
        raise ValueError(f"k={k} out of range for {v.size} values")
    # stable sort on the negated values keeps ties in ascending-index order
    return np.argsort(-v, kind="stable")[:k]


# -- convolution ---------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    b, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int,
            ho: int, wo: int) -> np.ndarray:
    b, c, h, w = x_shape
    dx = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if padding:
        dx = dx[:, :, padding:-padding, padding:-padding]
    return dx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2D convolution over NCHW input.

    `weight` is (out_ch, in_ch, kh, kw). Output spatial size is
    floor((H + 2p - kh)/stride) + 1.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OIHW weight")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input {x.data.shape[1]}, weight {weight.data.shape[1]}")
    if stride < 1:
        raise ValueError("conv2d stride must be >= 1")
    co, ci, kh, kw = weight.data.shape
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    w2 = weight.data.reshape(co, ci * kh * kw)
    y = np.matmul(w2[None], cols).reshape(x.data.shape[0], co, ho, wo)
    if bias is not None:
        y = y + bias.data.reshape(1, co, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _node(y, parents)

    def backward():
        g = out.grad.reshape(out.grad.shape[0], co, ho * wo)
        if weight.requires_grad:
            dw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
            weight._accum(dw.reshape(co, ci, kh, kw))
        if bias is not None and bias.requires_grad:
            bias._accum(out.grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(w2.T[None], g)
            x._accum(_col2im(dcols, x.data.shape, kh, kw, stride, padding, ho, wo))

    out._backward = backward
    return out


# -- resampling ----------------------------------------------------------


def _nearest_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    src = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(int)
    src = np.clip(src, 0, n_in - 1)
    m = np.zeros((n_out, n_in), dtype=dtype)
    m[np.arange(n_out), src] = 1.0
    return m


def _bilinear_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    # half-pixel-center mapping; edges clamp
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    lo = np.clip(np.floor(src).astype(int), 0, n_in - 1)
    hi = np.clip(lo + 1, 0, n_in - 1)
    frac = np.clip(src - lo, 0.0, 1.0)
    m = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def _resize(x: Tensor, size: tuple[int, int], matrix_fn) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError("resampling expects NCHW input")
    ho, wo = size
    if ho < 1 or wo < 1:
        raise ValueError("resampling target must be positive")
    ah = matrix_fn(x.data.shape[2], ho, x.data.dtype)
    aw = matrix_fn(x.data.shape[3], wo, x.data.dtype)
    y = np.einsum("ij,bcjk,lk->bcil", ah, x.data, aw, optimize=True)
    out = _node(y, (x,))

    def backward():
        x._accum(np.einsum("ij,bcjk,lk->bcil", ah.T, out.grad, aw.T, optimize=True))

    out._backward = backward
    return out


def upsample_nearest(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Nearest-neighbour resample of NCHW input to (H, W) = size."""
    return _resize(x, size, _nearest_matrix)


def upsample_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear resample (half-pixel centers, clamped edges) to (H, W) = size."""
    return _resize(x, size, _bilinear_matrix)


# -- gather / select -----------------------------------------------------


def take_channel(x: Tensor, index: np.ndarray) -> Tensor:
    """Per-pixel channel gather: out[b,h,w] = x[b, index[b,h,w], h, w]."""
    idx = np.asarray(index)
    if x.data.ndim != 4 or idx.shape != (x.data.shape[0],) + x.data.shape[2:]:
        raise ValueError("take_channel expects NCHW input and (B,H,W) indices")
    if idx.min() < 0 or idx.max() >= x.data.shape[1]:
        raise ValueError("take_channel index out of channel range")
    idx = idx.astype(np.int64)
    y = np.take_along_axis(x.data, idx[:, None], axis=1)[:, 0]
    out = _node(y, (x,))

    def backward():
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, idx[:, None], out.grad[:, None], axis=1)
        x._accum(dx)

    out._backward = backward
    return out


def masked_take(x: Tensor, mask: np.ndarray) -> Tensor:
    """Select pixel vectors: (B,D,H,W) with a (B,H,W) bool mask -> (N,D) rows."""
    m = np.asarray(mask, dtype=bool)
    if x.data.ndim != 4 or m.shape != (x.data.shape[0],) + x.data.shape[2:]:
        raise ValueError("masked_take expects NCHW input and a (B,H,W) mask")
    y = x.data.transpose(0, 2, 3, 1)[m]
    out = _node(y, (x,))

    def backward():
        dx = np.zeros_like(x.data)
        dx.transpose(0, 2, 3, 1)[m] = out.grad
        x._accum(dx)

    out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along `axis`; gradient slices back to each input."""
    ts = list(tensors)
    if not ts:
        raise ValueError("concat needs at least one tensor")
    out = _node(np.concatenate([t.data for t in ts], axis=axis), tuple(ts))
    sizes = [t.data.shape[axis] for t in ts]

    def backward():
        start = 0
        for t, size in zip(ts, sizes):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(start, start + size)
            t._accum(out.grad[tuple(sl)])
            start += size

    out._backward = backward
    return out


def cosine_rows(a: Tensor, b: np.ndarray, norm_floor: float = 1e-12) -> Tensor:
    """Row-wise cosine similarity between (N,D) rows of `a` and constant rows `b`.

    Norms are floored at `norm_floor`, so an all-zero row yields similarity 0
    rather than a division error. `b` is treated as constant (no gradient).
    """
    bv = np.asarray(b, dtype=a.data.dtype)
    if a.data.ndim != 2 or bv.shape != a.data.shape:
        raise ValueError("cosine_rows expects matching (N,D) arrays")
    na_raw = np.linalg.norm(a.data, axis=1)
    nb_raw = np.linalg.norm(bv, axis=1)
    na = np.maximum(na_raw, norm_floor)
    nb = np.maximum(nb_raw, norm_floor)
    dot = (a.data * bv).sum(axis=1)
    cos = dot / (na * nb)
    out = _node(cos, (a,))

    def backward():
        g = out.grad
        da = bv / (na * nb)[:, None]
        # the ||a|| term only varies where the norm is unclamped
        live = (na_raw >= norm_floor)[:, None]
        da = da - live * (cos / (na * na))[:, None] * a.data
        a._accum(g[:, None] * da)

    out._backward = backward
    return out
