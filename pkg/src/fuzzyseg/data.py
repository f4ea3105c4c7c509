"""Synthetic long-tailed shape scenes plus PPM/PGM image IO.

Each scene is a textured background with up to C-1 colored shapes (disk,
rectangle, triangle, cycling for larger C). Per-class presence
probabilities give the label distribution a long tail: the triangle class
is rare by default. Labels and rendered shapes are written in the same
pass, so before noise the color region of a shape and its label region are
identical by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "IGNORE",
    "SceneConfig",
    "SyntheticScene",
    "DatasetSplit",
    "generate_scene",
    "make_split",
    "default_palette",
    "labels_to_ppm",
    "image_to_ppm",
    "export_pgm",
    "read_ppm",
    "read_pgm",
    "write_manifest",
    "read_manifest",
]

log = logging.getLogger(__name__)

IGNORE = 255
_PLACEMENT_ATTEMPTS = 100

# render base colors, cycled for class ids beyond the list
_SHAPE_COLORS = [
    (0.85, 0.25, 0.25),  # disk: red
    (0.25, 0.75, 0.35),  # rectangle: green
    (0.25, 0.40, 0.90),  # triangle: blue
    (0.85, 0.75, 0.20),
    (0.70, 0.30, 0.80),
    (0.20, 0.75, 0.75),
    (0.90, 0.55, 0.20),
]


@dataclass(frozen=True)
class SceneConfig:
    """Generation parameters for one scene family."""

    n_classes: int = 4
    size: int = 64
    presence: tuple[float, ...] = (0.95, 0.8, 0.3)  # classes 1..C-1
    noise_sigma: float = 0.04
    color_jitter: float = 0.10
    min_shape: int = 10
    max_shape: int = 22

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes (background + one shape)")
        if self.size < 8:
            raise ValueError("scene size must be at least 8")
        if len(self.presence) != self.n_classes - 1:
            raise ValueError(
                f"presence needs {self.n_classes - 1} entries, got {len(self.presence)}")
        if any(not 0.0 <= p <= 1.0 for p in self.presence):
            raise ValueError("presence probabilities must lie in [0, 1]")
        if not 0 < self.min_shape <= self.max_shape <= self.size:
            raise ValueError("shape size bounds must satisfy 0 < min <= max <= size")
        if self.noise_sigma < 0.0 or self.color_jitter < 0.0:
            raise ValueError("noise_sigma and color_jitter must be nonnegative")


@dataclass(frozen=True)
class SyntheticScene:
    image: np.ndarray    # (H, W, 3) float64 in [0, 1]
    labels: np.ndarray   # (H, W) int64 class ids
    seed: int
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DatasetSplit:
    labeled_ids: tuple[int, ...]
    unlabeled_ids: tuple[int, ...]
    fraction: float
    seed: int


# -- shape stamps --------------------------------------------------------


def _disk_mask(size: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _rect_mask(size: int, cy: float, cx: float, hh: float, hw: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)


def _triangle_mask(size: int, cy: float, cx: float, h: float, w: float) -> np.ndarray:
    # upward isoceles: apex (cy - h/2, cx), base corners (cy + h/2, cx -+ w/2)
    ay, ax = cy - h / 2.0, cx
    by, bx = cy + h / 2.0, cx - w / 2.0
    cyy, cxx = cy + h / 2.0, cx + w / 2.0
    yy, xx = np.mgrid[0:size, 0:size]

    def side(py, px, qy, qx):
        return (qx - px) * (yy - py) - (qy - py) * (xx - px)

    d1, d2, d3 = side(ay, ax, by, bx), side(by, bx, cyy, cxx), side(cyy, cxx, ay, ax)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def _stamp(kind: int, size: int, rng: np.random.Generator, extent: float) -> np.ndarray:
    cy = rng.uniform(extent / 2, size - extent / 2)
    cx = rng.uniform(extent / 2, size - extent / 2)
    if kind == 0:
        return _disk_mask(size, cy, cx, extent / 2)
    if kind == 1:
        aspect = rng.uniform(0.6, 1.4)
        return _rect_mask(size, cy, cx, extent / 2 * aspect, extent / 2 / aspect)
    return _triangle_mask(size, cy, cx, extent, extent)


def generate_scene(config: SceneConfig, seed: int) -> SyntheticScene:
    """Render one scene deterministically from its seed.

    Shapes are placed without overlapping existing shapes; placement
    retries up to 100 times with a shrinking extent and raises RuntimeError
    if the scene cannot accommodate the shape.
    """
    rng = np.random.default_rng(seed)
    size = config.size

    base = rng.uniform(0.15, 0.75, size=3)
    theta = rng.uniform(0.0, 2 * np.pi)
    amp = rng.uniform(0.0, 0.25)
    yy, xx = np.mgrid[0:size, 0:size]
    ramp = ((yy / (size - 1) - 0.5) * np.sin(theta)
            + (xx / (size - 1) - 0.5) * np.cos(theta))
    image = np.clip(base[None, None, :] + amp * ramp[:, :, None], 0.0, 1.0)
    labels = np.zeros((size, size), dtype=np.int64)

    counts: dict[int, int] = {}
    for cls in range(1, config.n_classes):
        if rng.random() >= config.presence[cls - 1]:
            counts[cls] = 0
            continue
        kind = (cls - 1) % 3
        extent = float(rng.uniform(config.min_shape, config.max_shape))
        color = np.clip(np.array(_SHAPE_COLORS[(cls - 1) % len(_SHAPE_COLORS)])
                        + rng.uniform(-config.color_jitter, config.color_jitter, 3),
                        0.0, 1.0)
        placed = False
        for attempt in range(_PLACEMENT_ATTEMPTS):
            mask = _stamp(kind, size, rng, extent)
            if mask.any() and not (labels[mask] != 0).any():
                image[mask] = color
                labels[mask] = cls
                placed = True
                break
            # shrink every 20 failures so crowded scenes still resolve
            if attempt % 20 == 19 and extent > config.min_shape:
                extent = max(config.min_shape, extent * 0.8)
        if not placed:
            raise RuntimeError(
                f"could not place class {cls} after {_PLACEMENT_ATTEMPTS} attempts "
                f"(seed {seed})")
        counts[cls] = 1

    if config.noise_sigma > 0.0:
        image = np.clip(image + rng.normal(0.0, config.noise_sigma, image.shape),
                        0.0, 1.0)
    return SyntheticScene(image=image, labels=labels, seed=seed,
                          meta={"shape_counts": counts})


def make_split(n_scenes: int, labeled_fraction: float, seed: int) -> DatasetSplit:
    """Random labeled/unlabeled partition; at least one labeled scene."""
    if n_scenes < 1:
        raise ValueError("need at least one scene")
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    n_labeled = max(1, round(labeled_fraction * n_scenes))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_scenes)
    labeled = tuple(sorted(int(i) for i in perm[:n_labeled]))
    unlabeled = tuple(sorted(int(i) for i in perm[n_labeled:]))
    return DatasetSplit(labeled_ids=labeled, unlabeled_ids=unlabeled,
                        fraction=labeled_fraction, seed=seed)


# -- image files ---------------------------------------------------------


def default_palette(n_classes: int) -> dict[int, tuple[int, int, int]]:
    """Class id to display color; background dark gray, shapes follow render hues."""
    palette = {0: (60, 60, 60)}
    for cls in range(1, n_classes):
        r, g, b = _SHAPE_COLORS[(cls - 1) % len(_SHAPE_COLORS)]
        palette[cls] = (round(r * 255), round(g * 255), round(b * 255))
    return palette


def labels_to_ppm(labels: np.ndarray, palette: dict[int, tuple[int, int, int]],
                  ignore_value: int = IGNORE) -> bytes:
    """Binary P6 render of a label map.

    Ignored pixels are black; ids missing from the palette come out magenta
    and are logged once per call.
    """
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise ValueError(f"labels must be 2D, got shape {lab.shape}")
    h, w = lab.shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    unknown = np.zeros((h, w), dtype=bool)
    known = lab == ignore_value
    for cls, color in palette.items():
        hit = lab == cls
        rgb[hit] = color
        known |= hit
    unknown = ~known
    if unknown.any():
        rgb[unknown] = (255, 0, 255)
        log.warning("labels_to_ppm: %d pixels with ids outside the palette "
                    "rendered magenta", int(unknown.sum()))
    return b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes()


def image_to_ppm(image: np.ndarray) -> bytes:
    """Binary P6 render of a float image in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be (H,W,3), got shape {img.shape}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]) + q.tobytes()


def export_pgm(values: np.ndarray) -> bytes:
    """Binary P5 grayscale of a [0, 1] map; byte value round(255 * x)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"map must be 2D, got shape {v.shape}")
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise ValueError("map values must lie in [0, 1]")
    q = np.clip(np.rint(v * 255.0), 0, 255).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (v.shape[1], v.shape[0]) + q.tobytes()


def _parse_pnm(buf: bytes, magic: bytes) -> tuple[int, int, bytes]:
    if not buf.startswith(magic):
        raise ValueError(f"expected {magic.decode()} data")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(buf[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    return w, h, buf[pos:]


def read_ppm(path: str | Path) -> np.ndarray:
    """Load a binary P6 file as a float (H,W,3) image in [0, 1]."""
    w, h, raw = _parse_pnm(Path(path).read_bytes(), b"P6")
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w * 3)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def read_pgm(path: str | Path) -> np.ndarray:
    """Load a binary P5 file as a float (H,W) map in [0, 1]."""
    w, h, raw = _parse_pnm(Path(path).read_bytes(), b"P5")
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w)
    return data.reshape(h, w).astype(np.float64) / 255.0


# -- manifests -----------------------------------------------------------


def write_manifest(path: str | Path, split: DatasetSplit, seeds: dict[int, int]) -> None:
    """Line-delimited dataset manifest: `id seed labeled_flag`."""
    lines = []
    labeled = set(split.labeled_ids)
    for sid in sorted(split.labeled_ids + split.unlabeled_ids):
        lines.append(f"{sid} {seeds[sid]} {1 if sid in labeled else 0}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> list[tuple[int, int, bool]]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        sid, seed, flag = line.split()
        records.append((int(sid), int(seed), flag == "1"))
    return records
