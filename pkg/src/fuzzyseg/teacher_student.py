"""Teacher-student plumbing: parameter stores, the EMA update, stochastic
augmentation with explicit geometry, and complementary channel masks.

The teacher is never trained directly; its parameters move only through
``ema_update`` and carry ``requires_grad=False`` so teacher forwards build
no graph.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .tensorkit import Tensor

__all__ = [
    "ParameterStore",
    "ema_update",
    "AugmentationSpec",
    "AppliedGeometry",
    "AugmentResult",
    "weak_spec",
    "strong_spec",
    "apply_augmentation",
    "complementary_channel_masks",
]

IGNORE = 255


# -- parameters ----------------------------------------------------------


@dataclass
class ParameterStore:
    """Named flat collection of parameter tensors for one network role."""

    entries: dict[str, Tensor]
    role: str = "student"

    def __post_init__(self):
        for name, t in self.entries.items():
            if not isinstance(t, Tensor):
                raise TypeError(f"entry {name!r} is not a Tensor")

    def names(self) -> list[str]:
        return list(self.entries)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"no parameter {name!r} in {self.role} store") from None

    def clone(self, role: str, requires_grad: bool) -> "ParameterStore":
        cloned = {name: Tensor(t.data.copy(), requires_grad=requires_grad)
                  for name, t in self.entries.items()}
        return ParameterStore(entries=cloned, role=role)

    def zero_grads(self) -> None:
        for t in self.entries.values():
            t.grad = None

    def astype(self, dtype) -> None:
        for t in self.entries.values():
            t.data = t.data.astype(dtype)

    def n_params(self) -> int:
        return sum(t.data.size for t in self.entries.values())

    def digest(self) -> str:
        """Content hash over names and values, for no-silent-drift checks."""
        h = hashlib.sha256()
        for name in sorted(self.entries):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.entries[name].data).tobytes())
        return h.hexdigest()

    def assert_compatible(self, other: "ParameterStore") -> None:
        if self.names() != other.names():
            raise ValueError("parameter stores disagree on entry names")
        for name in self.entries:
            if self.entries[name].shape != other.entries[name].shape:
                raise ValueError(f"shape mismatch for {name!r}")


def ema_update(teacher: ParameterStore, student: ParameterStore, alpha: float) -> None:
    """In-place exponential moving average: t <- alpha * t + (1 - alpha) * s.

    The distance to the student contracts by exactly alpha per step when the
    student is held fixed.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    teacher.assert_compatible(student)
    for name, t in teacher.entries.items():
        s = student.entries[name].data
        t.data = alpha * t.data + (1.0 - alpha) * s


# -- augmentation --------------------------------------------------------


@dataclass(frozen=True)
class AugmentationSpec:
    """Parameters of one stochastic augmentation family.

    Geometric part: isotropic scale about the image center, horizontal flip,
    integer translation jitter, and an output window (crop) that may exceed
    the source extent, in which case the result is padded with invalid
    pixels. Photometric part: contrast about 0.5, brightness gain, and
    additive Gaussian noise, applied to images only.
    """

    kind: str                      # "weak" | "strong"
    scale_range: tuple[float, float] = (1.0, 1.0)
    flip_prob: float = 0.5
    out_size: int | None = None    # None keeps the input size
    translate_jitter: int = 0
    brightness_range: tuple[float, float] = (1.0, 1.0)
    contrast_range: tuple[float, float] = (1.0, 1.0)
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("weak", "strong"):
            raise ValueError(f"kind must be weak or strong, got {self.kind!r}")
        for name in ("scale_range", "brightness_range", "contrast_range"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")
        if self.translate_jitter < 0 or self.noise_sigma < 0.0:
            raise ValueError("translate_jitter and noise_sigma must be nonnegative")
        if self.out_size is not None and self.out_size < 1:
            raise ValueError("out_size must be positive")
        if self.kind == "weak":
            # weak views keep the frame: scaling and flipping only
            if (self.out_size is not None or self.translate_jitter
                    or self.brightness_range != (1.0, 1.0)
                    or self.contrast_range != (1.0, 1.0)
                    or self.noise_sigma):
                raise ValueError("weak specs allow only scale_range and flip_prob")


def weak_spec(scale_lo: float = 0.85, scale_hi: float = 1.15,
              flip_prob: float = 0.5) -> AugmentationSpec:
    return AugmentationSpec(kind="weak", scale_range=(scale_lo, scale_hi),
                            flip_prob=flip_prob)


def strong_spec(scale_lo: float = 0.7, scale_hi: float = 1.3, flip_prob: float = 0.5,
                out_size: int | None = None, translate_jitter: int = 6,
                brightness: tuple[float, float] = (0.6, 1.4),
                contrast: tuple[float, float] = (0.6, 1.4),
                noise_sigma: float = 0.05) -> AugmentationSpec:
    return AugmentationSpec(kind="strong", scale_range=(scale_lo, scale_hi),
                            flip_prob=flip_prob, out_size=out_size,
                            translate_jitter=translate_jitter,
                            brightness_range=brightness, contrast_range=contrast,
                            noise_sigma=noise_sigma)


@dataclass(frozen=True)
class AppliedGeometry:
    """Resolved geometric transform of one augmentation draw.

    `src_y`/`src_x` give, for every output pixel, the real-valued source
    coordinate it was sampled from; `valid` marks pixels whose source lies
    inside the input frame. `warp_nearest` transports any per-pixel map
    through the same transform, which is how teacher-side targets follow a
    strong view.
    """

    src_y: np.ndarray
    src_x: np.ndarray
    valid: np.ndarray
    in_shape: tuple[int, int]

    def nearest_indices(self) -> tuple[np.ndarray, np.ndarray]:
        h, w = self.in_shape
        iy = np.clip(np.rint(self.src_y).astype(np.int64), 0, h - 1)
        ix = np.clip(np.rint(self.src_x).astype(np.int64), 0, w - 1)
        return iy, ix

    def warp_nearest(self, values: np.ndarray, fill=0):
        """Resample a (H,W) or (C,H,W) map; invalid pixels get `fill`."""
        v = np.asarray(values)
        if v.shape[-2:] != self.in_shape:
            raise ValueError(f"map shape {v.shape} does not match input {self.in_shape}")
        iy, ix = self.nearest_indices()
        out = v[..., iy, ix]
        return np.where(self.valid, out, fill) if v.ndim == 2 else \
            np.where(self.valid[None], out, fill)


@dataclass(frozen=True)
class AugmentResult:
    image: np.ndarray            # (H', W', 3) float in [0, 1]
    labels: np.ndarray | None    # (H', W') int, IGNORE where invalid
    valid: np.ndarray            # (H', W') bool
    geometry: AppliedGeometry


def _bilinear_sample(image: np.ndarray, src_y: np.ndarray, src_x: np.ndarray,
                     valid: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    y = np.clip(src_y, 0.0, h - 1.0)
    x = np.clip(src_x, 0.0, w - 1.0)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (y - y0)[..., None]
    fx = (x - x0)[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.where(valid[..., None], out, 0.0)


def apply_augmentation(image: np.ndarray, labels: np.ndarray | None,
                       spec: AugmentationSpec, seed: int) -> AugmentResult:
    """One deterministic augmentation draw.

    Images are sampled bilinearly, labels nearest; both go through the same
    geometry, so a label pixel always describes the image pixel at its
    location. Out-of-frame samples become invalid: image 0, label IGNORE.
    The draw order (scale, flip, jitter, brightness, contrast, noise) is
    fixed so a (spec, seed) pair is fully reproducible.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"expected an (H,W,3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (h, w):
            raise ValueError(f"labels shape {labels.shape} does not match image ({h}, {w})")
    rng = np.random.default_rng(seed)

    scale = float(rng.uniform(*spec.scale_range))
    flip = bool(rng.random() < spec.flip_prob)
    if spec.translate_jitter:
        tx = int(rng.integers(-spec.translate_jitter, spec.translate_jitter + 1))
        ty = int(rng.integers(-spec.translate_jitter, spec.translate_jitter + 1))
    else:
        tx = ty = 0

    if spec.out_size is None:
        out_h, out_w = h, w
    else:
        out_h = out_w = spec.out_size
    yy, xx = np.meshgrid(np.arange(out_h, dtype=np.float64),
                         np.arange(out_w, dtype=np.float64), indexing="ij")
    # inverse map about the centers; translation is expressed in source pixels
    src_y = (yy - (out_h - 1) / 2.0) / scale + (h - 1) / 2.0 + ty
    xs = (xx - (out_w - 1) / 2.0) / scale
    if flip:
        xs = -xs
    src_x = xs + (w - 1) / 2.0 + tx

    valid = ((src_y >= 0.0) & (src_y <= h - 1.0)
             & (src_x >= 0.0) & (src_x <= w - 1.0))
    geometry = AppliedGeometry(src_y=src_y, src_x=src_x, valid=valid, in_shape=(h, w))

    out_img = _bilinear_sample(img, src_y, src_x, valid)

    brightness = float(rng.uniform(*spec.brightness_range))
    contrast = float(rng.uniform(*spec.contrast_range))
    if (brightness, contrast) != (1.0, 1.0):
        out_img = ((out_img - 0.5) * contrast + 0.5) * brightness
    if spec.noise_sigma > 0.0:
        out_img = out_img + rng.normal(0.0, spec.noise_sigma, size=out_img.shape)
    if (brightness, contrast) != (1.0, 1.0) or spec.noise_sigma > 0.0:
        out_img = np.clip(out_img, 0.0, 1.0)
        out_img = np.where(valid[..., None], out_img, 0.0)

    out_labels = None
    if labels is not None:
        out_labels = geometry.warp_nearest(labels, fill=IGNORE).astype(labels.dtype)

    return AugmentResult(image=out_img, labels=out_labels, valid=valid,
                         geometry=geometry)


# -- feature masking -----------------------------------------------------


def complementary_channel_masks(n: int, channels: int, keep_prob: float,
                                seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Bernoulli channel mask per sample and its exact complement.

    Returns two (n, channels) float arrays m and 1 - m; the first has ones
    with probability keep_prob. Applied to encoder features, the pair forces
    the two strong views to rely on disjoint channel subsets.
    """
    if n < 1 or channels < 1:
        raise ValueError("mask dimensions must be positive")
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    rng = np.random.default_rng(seed)
    first = (rng.random((n, channels)) < keep_prob).astype(np.float64)
    return first, 1.0 - first
