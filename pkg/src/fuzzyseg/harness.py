"""Training loop, schedules, configuration and the ablation driver.

One iteration follows the teacher-student recipe end to end: weakly
augmented unlabeled images go through the EMA teacher, the teacher
distribution becomes a fuzzy top-K target with entropy-based pixel
weights and batch-level class weights, and the student sees two strongly
augmented views with complementary encoder channel masks. The total
objective is L_s + lambda_u * L_u + lambda_c * L_c; parameters move by
poly-scheduled SGD with classical momentum, and the teacher tracks the
student by EMA after every step.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .data import (
    SceneConfig,
    SyntheticScene,
    generate_scene,
    make_split,
    write_manifest,
)
from .losses import (
    LossBreakdown,
    compute_prototypes,
    contrastive_loss,
    prototype_selection,
    supervised_ce,
    total_loss,
    unsupervised_kl,
)
from .metrics import ConfusionMatrix, iou_per_class, mean_iou, pixel_accuracy
from .model import SegNetConfig, forward, init_params, project_embeddings, save_checkpoint
from .pseudolabel import fuzzy_argmax, fuzzy_labels, normalized_entropy, pixel_weights
from .rebalance import class_frequencies, class_weights
from .teacher_student import (
    complementary_channel_masks,
    apply_augmentation,
    ema_update,
    strong_spec,
    weak_spec,
)
from .tensorkit import Tensor, softmax
from .tensorkit.serialize import write_tensor

__all__ = [
    "ConfigError",
    "NumericsError",
    "TrainConfig",
    "TrainResult",
    "EvalStats",
    "ABLATION_VARIANTS",
    "poly_lr",
    "SgdMomentum",
    "parse_config_text",
    "config_to_text",
    "run_training",
    "run_ablation",
    "evaluate",
]


class ConfigError(Exception):
    """Invalid configuration file or field combination (CLI exit code 2)."""


class NumericsError(Exception):
    """Non-finite loss encountered during training (CLI exit code 3)."""


@dataclass(frozen=True)
class TrainConfig:
    """Flat run configuration; every field maps to one `key=value` line."""

    # run
    seed: int = 0
    dtype: str = "float32"
    # data
    n_classes: int = 4
    image_size: int = 64
    n_train: int = 200
    n_eval: int = 50
    labeled_fraction: float = 0.125
    presence: tuple[float, ...] = (0.95, 0.8, 0.3)
    scene_noise: float = 0.04
    # model
    base_width: int = 16
    depth: int = 3
    embed_dim: int = 16
    # optimization
    epochs: int = 80
    labeled_batch: int = 8
    unlabeled_batch: int = 8
    lr0: float = 3e-2
    poly_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    ema_alpha: float = 0.99
    # method
    k_top: int = 2
    entropy_threshold: float = 0.7
    rebalance_eps: float = 1e-6
    class_weight_cap: float = 20.0
    proto_threshold: float = 0.5
    lambda_u: float = 0.5
    lambda_c: float = 0.1
    mask_keep_prob: float = 0.5
    # component toggles (the ablation axes)
    semi_enabled: bool = True
    fuzzy_enabled: bool = True
    pixel_weight_enabled: bool = True
    rebalance_enabled: bool = True
    contrastive_enabled: bool = True
    # augmentation
    flip_prob: float = 0.5
    weak_scale_lo: float = 0.85
    weak_scale_hi: float = 1.15
    strong_scale_lo: float = 0.7
    strong_scale_hi: float = 1.3
    strong_translate: int = 6
    brightness_lo: float = 0.6
    brightness_hi: float = 1.4
    contrast_lo: float = 0.6
    contrast_hi: float = 1.4
    strong_noise: float = 0.05
    # logging
    eval_every: int = 10
    log_class_weights: bool = False

    def validate(self) -> None:
        try:
            self.scene_config()
            self.net_config()
        except ValueError as err:
            raise ConfigError(str(err)) from None
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not 1 <= self.k_top <= self.n_classes:
            raise ConfigError(f"k_top={self.k_top} out of range for {self.n_classes} classes")
        if not 0.0 < self.entropy_threshold <= 1.0:
            raise ConfigError("entropy_threshold must be in (0, 1]")
        if not 0.0 < self.ema_alpha < 1.0:
            raise ConfigError("ema_alpha must be in (0, 1)")
        if min(self.epochs, self.labeled_batch, self.unlabeled_batch, self.eval_every) < 1:
            raise ConfigError("epochs, batch sizes and eval_every must be >= 1")
        if min(self.lr0, self.rebalance_eps, self.class_weight_cap) <= 0.0:
            raise ConfigError("lr0, rebalance_eps and class_weight_cap must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0.0 or self.lambda_u < 0.0 or self.lambda_c < 0.0:
            raise ConfigError("weight_decay and loss weights must be nonnegative")
        if not 0.0 < self.mask_keep_prob <= 1.0:
            raise ConfigError("mask_keep_prob must be in (0, 1]")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ConfigError("labeled_fraction must be in (0, 1]")
        if self.n_eval < 1 or self.n_train < 1:
            raise ConfigError("n_train and n_eval must be >= 1")
        if self.image_size % 2 ** self.depth:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by total stride {2 ** self.depth}")
        if not 0.0 <= self.poly_power:
            raise ConfigError("poly_power must be nonnegative")

    def scene_config(self) -> SceneConfig:
        # shape extents scale with the scene so small debug sizes stay placeable
        min_shape = max(3, (10 * self.image_size) // 64)
        max_shape = max(min_shape + 1, (22 * self.image_size) // 64)
        return SceneConfig(n_classes=self.n_classes, size=self.image_size,
                           presence=self.presence, noise_sigma=self.scene_noise,
                           min_shape=min_shape, max_shape=max_shape)

    def net_config(self) -> SegNetConfig:
        return SegNetConfig(n_classes=self.n_classes, base_width=self.base_width,
                            depth=self.depth, embed_dim=self.embed_dim)

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def config_to_text(config: TrainConfig) -> str:
    lines = [f"{f.name}={_format_value(getattr(config, f.name))}" for f in fields(TrainConfig)]
    return "\n".join(lines) + "\n"


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse `key=value` lines; `#` starts a comment; unknown keys are errors."""
    by_name = {f.name: f for f in fields(TrainConfig)}
    overrides: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in by_name:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        overrides[key] = _parse_value(by_name[key], value, lineno)
    cfg = replace(base or TrainConfig(), **overrides)
    cfg.validate()
    return cfg


def _parse_value(field_def, value: str, lineno: int):
    ftype = field_def.type
    try:
        if ftype == "int":
            return int(value)
        if ftype == "float":
            return float(value)
        if ftype == "bool":
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if ftype.startswith("tuple"):
            return tuple(float(v) for v in value.split(",") if v.strip())
        return value
    except ValueError as err:
        raise ConfigError(f"line {lineno}: bad value for {field_def.name}: {err}") from None


# -- schedule and optimizer ----------------------------------------------


def poly_lr(lr0: float, iteration: int, max_iterations: int, power: float = 0.9) -> float:
    """Polynomial decay lr0 * (1 - i/i_max)^power, clamped to 0 past the end."""
    if lr0 <= 0.0 or power < 0.0:
        raise ValueError("lr0 must be positive and power nonnegative")
    if max_iterations < 1 or iteration < 0:
        raise ValueError("iteration counts must be nonnegative with max >= 1")
    if iteration >= max_iterations:
        return 0.0
    return lr0 * (1.0 - iteration / max_iterations) ** power


class SgdMomentum:
    """Classical momentum: v <- m*v + (g + wd*theta); theta <- theta - lr*v.

    With a zero data gradient and an empty buffer, one step shrinks the
    parameters by exactly (1 - lr*wd).
    """

    def __init__(self, store, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in store.entries.items()}

    def step(self, store, lr: float) -> None:
        for name, t in store.entries.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            g = g + self.weight_decay * t.data
            self.velocity[name] = self.momentum * self.velocity[name] + g
            t.data = t.data - lr * self.velocity[name]


# -- bookkeeping ---------------------------------------------------------


@dataclass(frozen=True)
class MetricsRecord:
    iteration: int
    lr: float
    losses: LossBreakdown
    class_w: tuple[float, ...] | None
    wall_time: float


@dataclass(frozen=True)
class EvalStats:
    miou: float
    accuracy: float
    iou: tuple[float, ...]


@dataclass(frozen=True)
class EvalRecord:
    epoch: int
    iteration: int
    arm: str  # "student" | "teacher"
    stats: EvalStats


@dataclass
class TrainResult:
    config: TrainConfig
    out_dir: Path
    records: list[MetricsRecord]
    eval_records: list[EvalRecord]
    final_student: EvalStats
    final_teacher: EvalStats
    iterations: int

    @property
    def loss_csv(self) -> Path:
        return self.out_dir / "loss.csv"


def _seed_from(root: int, *tags: int) -> int:
    return int(np.random.SeedSequence([root, *tags]).generate_state(1, np.uint64)[0])


def _batch_stream(ids: tuple[int, ...], batch: int, rng: np.random.Generator):
    """Infinite shuffled epochs of (possibly partial) batches."""
    ids = np.asarray(ids)
    while True:
        perm = rng.permutation(ids.size)
        for start in range(0, ids.size, batch):
            yield [int(ids[j]) for j in perm[start:start + batch]]


@contextmanager
def _no_grad(store):
    flags = {name: t.requires_grad for name, t in store.entries.items()}
    for t in store.entries.values():
        t.requires_grad = False
    try:
        yield
    finally:
        for name, t in store.entries.items():
            t.requires_grad = flags[name]


def evaluate(params, scenes: list[SyntheticScene], net_cfg: SegNetConfig,
             dtype, chunk: int = 16) -> EvalStats:
    """mIoU / accuracy of argmax predictions over clean scenes, gradient-free."""
    cm = ConfusionMatrix(net_cfg.n_classes)
    with _no_grad(params):
        for start in range(0, len(scenes), chunk):
            part = scenes[start:start + chunk]
            images = np.stack([s.image.transpose(2, 0, 1) for s in part]).astype(dtype)
            logits, _ = forward(params, images, net_cfg)
            pred = np.argmax(logits.data, axis=1)
            for scene, p in zip(part, pred):
                cm.update(scene.labels, p)
    iou, _ = iou_per_class(cm)
    return EvalStats(miou=mean_iou(cm), accuracy=pixel_accuracy(cm),
                     iou=tuple(float(v) for v in iou))


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _dump_diagnostics(out_dir: Path, iteration: int, arrays: dict[str, np.ndarray],
                      losses: dict[str, float]) -> Path:
    diag = out_dir / "diagnostics"
    diag.mkdir(parents=True, exist_ok=True)
    for name, arr in arrays.items():
        write_tensor(diag / f"iter{iteration}_{name}.ftns",
                     np.asarray(arr, dtype=np.float64))
    lines = [f"iteration={iteration}"] + [f"{k}={v}" for k, v in losses.items()]
    (diag / f"iter{iteration}_losses.txt").write_text("\n".join(lines) + "\n")
    return diag


# -- the training loop ---------------------------------------------------


def run_training(config: TrainConfig, out_dir: str | Path) -> TrainResult:
    """Train one model per `config`, writing artifacts under `out_dir`.

    Files: loss.csv (deterministic for a given config), timing.csv,
    eval.csv, manifest.txt, config.txt, checkpoint_student.bin and
    checkpoint_teacher.bin. Raises NumericsError and dumps the offending
    batch if any loss goes non-finite.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dtype = config.np_dtype()
    scene_cfg = config.scene_config()
    net_cfg = config.net_config()

    scene_seeds = {i: _seed_from(config.seed, 0, i) for i in range(config.n_train)}
    train_scenes = [generate_scene(scene_cfg, scene_seeds[i]) for i in range(config.n_train)]
    eval_scenes = [generate_scene(scene_cfg, _seed_from(config.seed, 1, i))
                   for i in range(config.n_eval)]
    split = make_split(config.n_train, config.labeled_fraction, _seed_from(config.seed, 2))
    write_manifest(out / "manifest.txt", split, scene_seeds)
    (out / "config.txt").write_text(config_to_text(config))

    student = init_params(net_cfg, _seed_from(config.seed, 3))
    student.astype(dtype)
    teacher = student.clone("teacher", requires_grad=False)
    optimizer = SgdMomentum(student, config.momentum, config.weight_decay)

    weak = weak_spec(config.weak_scale_lo, config.weak_scale_hi, config.flip_prob)
    strong = strong_spec(config.strong_scale_lo, config.strong_scale_hi,
                         config.flip_prob, out_size=None,
                         translate_jitter=config.strong_translate,
                         brightness=(config.brightness_lo, config.brightness_hi),
                         contrast=(config.contrast_lo, config.contrast_hi),
                         noise_sigma=config.strong_noise)

    has_unlabeled = len(split.unlabeled_ids) > 0
    # every variant of a config shares the same epoch length (and so the same
    # poly schedule), anchored to the unlabeled loader whenever one exists
    if has_unlabeled:
        steps_per_epoch = math.ceil(len(split.unlabeled_ids) / config.unlabeled_batch)
    else:
        steps_per_epoch = math.ceil(len(split.labeled_ids) / config.labeled_batch)
    i_max = config.epochs * steps_per_epoch
    use_semi = config.semi_enabled and has_unlabeled

    labeled_stream = _batch_stream(split.labeled_ids, config.labeled_batch,
                                   np.random.default_rng(_seed_from(config.seed, 4)))
    unlabeled_stream = _batch_stream(split.unlabeled_ids, config.unlabeled_batch,
                                     np.random.default_rng(_seed_from(config.seed, 5))) \
        if has_unlabeled else None

    n_classes = config.n_classes
    size = config.image_size
    records: list[MetricsRecord] = []
    eval_records: list[EvalRecord] = []

    for iteration in range(i_max):
        tic = time.perf_counter()
        lr = poly_lr(config.lr0, iteration, i_max, config.poly_power)

        # supervised branch: weakly augmented labeled scenes
        batch_l = next(labeled_stream)
        imgs_l, labels_l = [], []
        for slot, sid in enumerate(batch_l):
            scene = train_scenes[sid]
            res = apply_augmentation(scene.image, scene.labels, weak,
                                     _seed_from(config.seed, 6, iteration, slot))
            imgs_l.append(res.image.transpose(2, 0, 1))
            labels_l.append(res.labels)
        x_l = np.stack(imgs_l).astype(dtype)
        y_l = np.stack(labels_l)
        logits_l, _ = forward(student, x_l, net_cfg)
        loss_s, _ = supervised_ce(softmax(logits_l, axis=1), y_l)

        loss_u = Tensor(0.0)
        loss_c = Tensor(0.0)
        n_valid = 0
        class_w = np.ones(n_classes)
        diag_arrays: dict[str, np.ndarray] = {"images_labeled": x_l,
                                              "labels": y_l.astype(np.float64)}

        if use_semi:
            batch_u = next(unlabeled_stream)
            weak_results = []
            for slot, sid in enumerate(batch_u):
                scene = train_scenes[sid]
                weak_results.append(apply_augmentation(
                    scene.image, None, weak, _seed_from(config.seed, 7, iteration, slot)))
            x_w = np.stack([r.image.transpose(2, 0, 1) for r in weak_results]).astype(dtype)
            t_logits, _ = forward(teacher, x_w, net_cfg)
            t_probs = softmax(t_logits, axis=1).data.astype(np.float64)

            k_eff = config.k_top if config.fuzzy_enabled else 1
            fuzzy_w, weight_w, valid_w = [], [], []
            for i in range(len(weak_results)):
                fz = fuzzy_labels(t_probs[i], k_eff)
                fuzzy_w.append(fz)
                if config.pixel_weight_enabled:
                    weight_w.append(pixel_weights(normalized_entropy(t_probs[i]),
                                                  config.entropy_threshold))
                else:
                    weight_w.append(np.ones((size, size)))
                valid_w.append(weak_results[i].valid)

            if config.rebalance_enabled:
                freqs = class_frequencies(fuzzy_w, valid_w)
                # a zero median (most classes absent from the teacher's
                # assignments, the cold-start state) would zero every class
                # weight and silence the consistency loss; stay neutral
                # until the median is informative
                if np.median(freqs) > 0.0:
                    class_w = class_weights(freqs, config.rebalance_eps,
                                            max_weight=config.class_weight_cap).weights
                else:
                    class_w = np.ones(n_classes)
            else:
                class_w = np.ones(n_classes)

            # two strong views; teacher targets ride along through the geometry
            b_u = len(weak_results)
            imgs_s, fuzzy_s, weight_s, valid_s, assign_s = [], [], [], [], []
            for view in (0, 1):
                for slot, res_w in enumerate(weak_results):
                    aug = apply_augmentation(
                        res_w.image, None, strong,
                        _seed_from(config.seed, 8, iteration, view, slot))
                    geo = aug.geometry
                    imgs_s.append(aug.image.transpose(2, 0, 1))
                    fuzzy_s.append(geo.warp_nearest(fuzzy_w[slot], fill=0.0))
                    weight_s.append(geo.warp_nearest(weight_w[slot], fill=0.0))
                    valid_s.append(
                        geo.warp_nearest(valid_w[slot].astype(np.float64), fill=0.0) > 0.5)
                    assign_s.append(geo.warp_nearest(fuzzy_argmax(fuzzy_w[slot]), fill=0))
            x_s = np.stack(imgs_s).astype(dtype)
            fuzzy_arr = np.stack(fuzzy_s)
            weight_arr = np.stack(weight_s)
            valid_arr = np.stack(valid_s)
            assign_arr = np.stack(assign_s)

            m0, m1 = complementary_channel_masks(
                b_u, net_cfg.encoder_width, config.mask_keep_prob,
                _seed_from(config.seed, 9, iteration))
            feature_mask = np.concatenate([m0, m1], axis=0)

            logits_u, feats_u = forward(student, x_s, net_cfg, feature_mask=feature_mask)
            probs_u = softmax(logits_u, axis=1)

            # consistency loss per view, averaged; each view normalizes by its
            # own valid-pixel count
            view_losses = []
            n_valid = 0
            for view in (0, 1):
                view_mask = valid_arr.copy()
                view_mask[(1 - view) * b_u:(2 - view) * b_u] = False
                lu, nv = unsupervised_kl(fuzzy_arr, probs_u, weight_arr, view_mask, class_w)
                view_losses.append(lu)
                n_valid += nv
            loss_u = (view_losses[0] + view_losses[1]) * 0.5

            if config.contrastive_enabled:
                emb = project_embeddings(student, feats_u, net_cfg, (size, size))
                sel = prototype_selection(weight_arr, valid_arr, config.proto_threshold)
                protos = compute_prototypes(emb, assign_arr, sel, n_classes)
                loss_c, _ = contrastive_loss(emb, assign_arr, sel, protos)

            diag_arrays.update(images_weak=x_w, images_strong=x_s, fuzzy=fuzzy_arr,
                               pixel_weight=weight_arr,
                               valid=valid_arr.astype(np.float64))

        loss = total_loss(loss_s, loss_u, loss_c, config.lambda_u, config.lambda_c)
        breakdown = LossBreakdown(
            loss_s=loss_s.item(), loss_u=loss_u.item(), loss_c=loss_c.item(),
            loss_total=loss.item(), n_valid=n_valid,
            lambda_u=config.lambda_u, lambda_c=config.lambda_c)
        if not all(np.isfinite(v) for v in (breakdown.loss_s, breakdown.loss_u,
                                            breakdown.loss_c, breakdown.loss_total)):
            diag = _dump_diagnostics(out, iteration, diag_arrays, {
                "loss_s": breakdown.loss_s, "loss_u": breakdown.loss_u,
                "loss_c": breakdown.loss_c, "loss_total": breakdown.loss_total})
            raise NumericsError(
                f"non-finite loss at iteration {iteration}; diagnostics in {diag}")

        loss.backward()
        optimizer.step(student, lr)
        student.zero_grads()
        ema_update(teacher, student, config.ema_alpha)

        records.append(MetricsRecord(
            iteration=iteration, lr=lr, losses=breakdown,
            class_w=tuple(float(v) for v in class_w) if config.log_class_weights else None,
            wall_time=time.perf_counter() - tic))

        epoch_done = (iteration + 1) % steps_per_epoch == 0
        if epoch_done:
            epoch = (iteration + 1) // steps_per_epoch
            if epoch % config.eval_every == 0 or epoch == config.epochs:
                for arm, params in (("student", student), ("teacher", teacher)):
                    stats = evaluate(params, eval_scenes, net_cfg, dtype)
                    eval_records.append(EvalRecord(epoch=epoch, iteration=iteration,
                                                   arm=arm, stats=stats))

    _write_loss_csv(out / "loss.csv", records, n_classes, config.log_class_weights)
    _write_timing_csv(out / "timing.csv", records)
    _write_eval_csv(out / "eval.csv", eval_records, n_classes)
    config_items = {f.name: _format_value(getattr(config, f.name))
                    for f in fields(TrainConfig)}
    save_checkpoint(out / "checkpoint_student.bin", student, i_max, config_items)
    save_checkpoint(out / "checkpoint_teacher.bin", teacher, i_max, config_items)

    final_student = next(r.stats for r in reversed(eval_records) if r.arm == "student")
    final_teacher = next(r.stats for r in reversed(eval_records) if r.arm == "teacher")
    return TrainResult(config=config, out_dir=out, records=records,
                       eval_records=eval_records, final_student=final_student,
                       final_teacher=final_teacher, iterations=i_max)


def _write_loss_csv(path: Path, records: list[MetricsRecord], n_classes: int,
                    with_weights: bool) -> None:
    header = "iter,lr,loss_s,loss_u,loss_c,loss_total,n_valid"
    if with_weights:
        header += "," + ",".join(f"w_{c}" for c in range(n_classes))
    lines = [header]
    for r in records:
        row = [str(r.iteration), _fmt(r.lr), _fmt(r.losses.loss_s), _fmt(r.losses.loss_u),
               _fmt(r.losses.loss_c), _fmt(r.losses.loss_total), str(r.losses.n_valid)]
        if with_weights:
            row += [_fmt(v) for v in (r.class_w or ())]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def _write_timing_csv(path: Path, records: list[MetricsRecord]) -> None:
    lines = ["iter,seconds"] + [f"{r.iteration},{r.wall_time:.6f}" for r in records]
    path.write_text("\n".join(lines) + "\n")


def _write_eval_csv(path: Path, eval_records: list[EvalRecord], n_classes: int) -> None:
    header = "epoch,iter,arm,miou,pixel_acc," + ",".join(
        f"iou_{c}" for c in range(n_classes))
    lines = [header]
    for r in eval_records:
        lines.append(",".join([str(r.epoch), str(r.iteration), r.arm,
                               _fmt(r.stats.miou), _fmt(r.stats.accuracy),
                               *(_fmt(v) for v in r.stats.iou)]))
    path.write_text("\n".join(lines) + "\n")


# -- ablation ------------------------------------------------------------

ABLATION_VARIANTS: list[tuple[str, dict]] = [
    ("baseline", dict(semi_enabled=False, contrastive_enabled=False)),
    ("wo_fuzzy", dict(fuzzy_enabled=False)),
    ("wo_pixel_weight", dict(pixel_weight_enabled=False)),
    ("wo_rebalance", dict(rebalance_enabled=False)),
    ("wo_contrastive", dict(contrastive_enabled=False)),
    ("full", dict()),
]


@dataclass
class AblationResult:
    out_dir: Path
    runs: dict[tuple[str, int], TrainResult]

    def summary_rows(self) -> list[tuple[str, int, float, float]]:
        return [(variant, seed, res.final_student.miou, res.final_teacher.miou)
                for (variant, seed), res in self.runs.items()]


def run_ablation(base_config: TrainConfig, seeds: list[int],
                 out_dir: str | Path) -> AblationResult:
    """Train every component-removal variant for every seed.

    The baseline variant disables the whole unsupervised path, so its
    trajectory coincides bit for bit with a supervised-only run of the same
    seed. Results land in out_dir/<variant>/seed<k>/ plus a summary CSV and
    a small text table.
    """
    if not seeds:
        raise ConfigError("need at least one seed")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs: dict[tuple[str, int], TrainResult] = {}
    for variant, toggles in ABLATION_VARIANTS:
        for seed in seeds:
            cfg = replace(base_config, seed=seed, **toggles)
            runs[(variant, seed)] = run_training(cfg, out / variant / f"seed{seed}")

    lines = ["variant,seed,student_miou,teacher_miou"]
    for variant, _ in ABLATION_VARIANTS:
        for seed in seeds:
            res = runs[(variant, seed)]
            lines.append(f"{variant},{seed},{_fmt(res.final_student.miou)},"
                         f"{_fmt(res.final_teacher.miou)}")
    (out / "ablation_summary.csv").write_text("\n".join(lines) + "\n")

    table = [f"{'variant':<18}{'mean student mIoU':>20}{'std':>10}  seeds={seeds}"]
    for variant, _ in ABLATION_VARIANTS:
        vals = np.array([runs[(variant, s)].final_student.miou for s in seeds])
        table.append(f"{variant:<18}{vals.mean():>20.4f}{vals.std():>10.4f}")
    (out / "ablation_table.txt").write_text("\n".join(table) + "\n")
    return AblationResult(out_dir=out, runs=runs)
