"""Numpy-backed tensors, reverse-mode autodiff and the gradient oracle."""

from .gradcheck import central_difference_grad, finite_diff_grad_check
from .serialize import read_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor
from .tensor import (
    ComputeGraph,
    Tensor,
    as_tensor,
    assert_all_finite,
    concat,
    conv2d,
    cosine_rows,
    masked_take,
    matmul,
    softmax,
    take_channel,
    topk_indices,
    upsample_bilinear,
    upsample_nearest,
)

__all__ = [
    "ComputeGraph",
    "Tensor",
    "as_tensor",
    "assert_all_finite",
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
    "central_difference_grad",
    "finite_diff_grad_check",
    "read_tensor",
    "tensor_from_bytes",
    "tensor_to_bytes",
    "write_tensor",
]
