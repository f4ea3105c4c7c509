"""Compact encoder-decoder segmentation network.

A stack of stride-2 3x3 convolutions halves the resolution per stage; the
decoder mirrors it with bilinear upsampling plus 3x3 convolutions, a 1x1
classifier produces logits at half resolution which are upsampled to the
input grid. A separate 1x1 projection head turns encoder features into
per-pixel embeddings for the contrastive term.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .teacher_student import ParameterStore
from .tensorkit import (
    Tensor,
    as_tensor,
    conv2d,
    upsample_bilinear,
)
from .tensorkit.serialize import blob_length, tensor_from_bytes, tensor_to_bytes

__all__ = [
    "SegNetConfig",
    "init_params",
    "forward",
    "project_embeddings",
    "save_checkpoint",
    "load_checkpoint",
]

_CKPT_MAGIC = b"FCKP"


@dataclass(frozen=True)
class SegNetConfig:
    """Architecture hyperparameters; widths double per encoder stage."""

    n_classes: int
    in_channels: int = 3
    base_width: int = 16
    depth: int = 3
    embed_dim: int = 16

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if min(self.in_channels, self.base_width, self.depth, self.embed_dim) < 1:
            raise ValueError("all architecture sizes must be positive")
        if self.embed_dim > self.encoder_width:
            raise ValueError(
                f"embed_dim {self.embed_dim} exceeds the feature width {self.encoder_width}")

    @property
    def encoder_width(self) -> int:
        return self.base_width * 2 ** (self.depth - 1)

    @property
    def total_stride(self) -> int:
        return 2 ** self.depth

    def stage_widths(self) -> list[int]:
        return [self.base_width * 2 ** i for i in range(self.depth)]


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_params(config: SegNetConfig, seed: int, role: str = "student",
                zero_classifier: bool = True) -> ParameterStore:
    """Fan-in-scaled normal init; biases zero; classifier zero by default.

    The zero classifier makes the initial prediction exactly uniform, which
    keeps the cold-start teacher maximally uncertain. Gradient diagnostics
    pass zero_classifier=False since a zero output layer blanks upstream
    gradients.
    """
    rng = np.random.default_rng(seed)
    entries: dict[str, Tensor] = {}

    def add(name: str, weight_shape: tuple[int, ...], zero: bool = False):
        data = np.zeros(weight_shape) if zero else _he_normal(rng, weight_shape)
        entries[f"{name}.weight"] = Tensor(data, requires_grad=True)
        entries[f"{name}.bias"] = Tensor(np.zeros(weight_shape[0]), requires_grad=True)

    widths = config.stage_widths()
    prev = config.in_channels
    for i, width in enumerate(widths, start=1):
        add(f"enc{i}", (width, prev, 3, 3))
        prev = width
    for i in range(1, config.depth):
        add(f"dec{i}", (prev // 2, prev, 3, 3))
        prev //= 2
    add("cls", (config.n_classes, prev, 1, 1), zero=zero_classifier)
    add("proj", (config.embed_dim, config.encoder_width, 1, 1))
    return ParameterStore(entries=entries, role=role)


def _require(params: ParameterStore, name: str) -> Tensor:
    try:
        return params[name]
    except KeyError:
        raise RuntimeError(
            f"parameter store is missing {name!r}; was it built with init_params?") from None


def forward(params: ParameterStore, image, config: SegNetConfig,
            feature_mask: np.ndarray | None = None,
            preact_log: list | None = None) -> tuple[Tensor, Tensor]:
    """Run the network; returns (logits at input resolution, encoder features).

    `image` is (B, in_channels, H, W); H and W must be divisible by the
    total stride. `feature_mask` is an optional (B, encoder_width) per
    sample channel mask multiplied into the encoder output, and the
    returned features are the masked ones. When `preact_log` is a list,
    every pre-relu activation array is appended to it; the finite
    difference checks use this to keep evaluation points away from the
    relu kinks.
    """
    x = as_tensor(image)
    if x.data.ndim != 4 or x.data.shape[1] != config.in_channels:
        raise ValueError(
            f"expected (B,{config.in_channels},H,W) input, got shape {x.shape}")
    h, w = x.data.shape[2:]
    stride = config.total_stride
    if h % stride or w % stride:
        raise ValueError(f"input size {h}x{w} not divisible by total stride {stride}")

    out = x
    for i in range(1, config.depth + 1):
        out = conv2d(out, _require(params, f"enc{i}.weight"),
                     _require(params, f"enc{i}.bias"), stride=2, padding=1)
        if preact_log is not None:
            preact_log.append(out.data)
        out = out.relu()

    features = out
    if feature_mask is not None:
        m = np.asarray(feature_mask, dtype=out.data.dtype)
        if m.shape != (out.data.shape[0], out.data.shape[1]):
            raise ValueError(
                f"feature mask shape {m.shape} does not match features "
                f"{out.data.shape[:2]}")
        features = features * Tensor(m[:, :, None, None])

    out = features
    fh, fw = features.data.shape[2:]
    for i in range(1, config.depth):
        fh, fw = fh * 2, fw * 2
        out = upsample_bilinear(out, (fh, fw))
        out = conv2d(out, _require(params, f"dec{i}.weight"),
                     _require(params, f"dec{i}.bias"), stride=1, padding=1)
        if preact_log is not None:
            preact_log.append(out.data)
        out = out.relu()

    logits_half = conv2d(out, _require(params, "cls.weight"),
                         _require(params, "cls.bias"), stride=1, padding=0)
    logits = upsample_bilinear(logits_half, (h, w))
    return logits, features


def project_embeddings(params: ParameterStore, features: Tensor,
                       config: SegNetConfig, out_size: tuple[int, int],
                       preact_log: list | None = None) -> Tensor:
    """1x1 projection plus relu, upsampled to the label grid: (B, D, H, W)."""
    weight = _require(params, "proj.weight")
    if weight.data.shape[1] != features.data.shape[1]:
        raise ValueError(
            f"projection expects {weight.data.shape[1]} channels, features have "
            f"{features.data.shape[1]}")
    emb = conv2d(features, weight, _require(params, "proj.bias"),
                 stride=1, padding=0)
    if preact_log is not None:
        preact_log.append(emb.data)
    return upsample_bilinear(emb.relu(), out_size)


# -- checkpoints ---------------------------------------------------------


def save_checkpoint(path: str | Path, params: ParameterStore, step: int,
                    config_items: dict[str, object]) -> None:
    """Single-file checkpoint: manifest (key=value lines) + named tensor blobs."""
    manifest_lines = [f"step={step}", f"role={params.role}"]
    manifest_lines += [f"{k}={v}" for k, v in config_items.items()]
    manifest = ("\n".join(manifest_lines) + "\n").encode()
    blob = bytearray()
    blob += _CKPT_MAGIC
    blob += struct.pack("<Q", len(manifest))
    blob += manifest
    blob += struct.pack("<Q", len(params.entries))
    for name, tensor in params.entries.items():
        encoded = name.encode()
        blob += struct.pack("<Q", len(encoded))
        blob += encoded
        blob += tensor_to_bytes(tensor.data)
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path, requires_grad: bool = False
                    ) -> tuple[ParameterStore, int, dict[str, str]]:
    """Inverse of save_checkpoint; returns (store, step, manifest dict)."""
    buf = Path(path).read_bytes()
    if buf[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (mlen,) = struct.unpack_from("<Q", buf, 4)
    manifest_text = buf[12:12 + mlen].decode()
    offset = 12 + mlen
    (n_entries,) = struct.unpack_from("<Q", buf, offset)
    offset += 8
    entries: dict[str, Tensor] = {}
    for _ in range(n_entries):
        (nlen,) = struct.unpack_from("<Q", buf, offset)
        offset += 8
        name = buf[offset:offset + nlen].decode()
        offset += nlen
        length = blob_length(buf, offset)
        entries[name] = Tensor(tensor_from_bytes(buf[offset:offset + length]),
                               requires_grad=requires_grad)
        offset += length
    manifest: dict[str, str] = {}
    for line in manifest_text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            manifest[key] = value
    step = int(manifest.get("step", "0"))
    store = ParameterStore(entries=entries, role=manifest.get("role", "student"))
    return store, step, manifest
