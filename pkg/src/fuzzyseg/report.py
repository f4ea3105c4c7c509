"""Post-run reporting: smoothed loss summaries and qualitative panels.

Reports are rebuilt purely from a run directory (CSV logs, config and
checkpoints), so they can be regenerated long after training.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import default_palette, export_pgm, generate_scene, image_to_ppm, labels_to_ppm
from .harness import TrainConfig, _no_grad, _seed_from, parse_config_text
from .model import forward, load_checkpoint
from .pseudolabel import normalized_entropy, pixel_weights
from .tensorkit import softmax

__all__ = ["moving_average", "ConvergenceStats", "convergence_stats",
           "read_loss_csv", "write_report"]

SMOOTH_WINDOW = 100


def moving_average(values: np.ndarray, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Trailing mean over up to `window` samples, clamped at the stream head."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("need a non-empty 1D series")
    if window < 1:
        raise ValueError("window must be >= 1")
    window = min(window, v.size)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    out = np.empty_like(v)
    for i in range(v.size):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


@dataclass(frozen=True)
class ConvergenceStats:
    """Smoothed-loss figures used by the convergence checks."""

    total_at_reference: float   # smoothed L_total at the reference iteration
    total_final: float
    ls_slope_initial: float     # per-iteration slope of smoothed L_s, head
    ls_slope_final: float       # same, tail
    reference_iteration: int


def convergence_stats(loss_total: np.ndarray, loss_s: np.ndarray,
                      reference_iteration: int = 200,
                      window: int = SMOOTH_WINDOW) -> ConvergenceStats:
    total = moving_average(loss_total, window)
    ls = moving_average(loss_s, window)
    ref = min(reference_iteration, total.size - 1)
    span = min(window, ls.size)
    head = (ls[span - 1] - ls[0]) / max(span - 1, 1)
    tail = (ls[-1] - ls[-span]) / max(span - 1, 1)
    return ConvergenceStats(total_at_reference=float(total[ref]),
                            total_final=float(total[-1]),
                            ls_slope_initial=float(head),
                            ls_slope_final=float(tail),
                            reference_iteration=ref)


def read_loss_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Load loss.csv columns into float arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} has no data rows")
    return {key: np.array([float(r[key]) for r in rows]) for key in rows[0]}


def write_report(run_dir: str | Path, n_panels: int = 4) -> Path:
    """Build report/ inside a finished run directory.

    summary.txt carries the smoothed-loss figures and final evaluation
    rows; panels show eval scenes with ground truth, student prediction,
    and the teacher's entropy and reliability-weight maps.
    """
    run = Path(run_dir)
    report = run / "report"
    report.mkdir(exist_ok=True)
    config = parse_config_text((run / "config.txt").read_text())

    columns = read_loss_csv(run / "loss.csv")
    stats = convergence_stats(columns["loss_total"], columns["loss_s"])
    eval_tail = (run / "eval.csv").read_text().strip().splitlines()

    lines = [
        f"iterations={columns['iter'].size}",
        f"smoothed_total_at_iter{stats.reference_iteration}={stats.total_at_reference:.6f}",
        f"smoothed_total_final={stats.total_final:.6f}",
        f"ls_slope_initial={stats.ls_slope_initial:.3e}",
        f"ls_slope_final={stats.ls_slope_final:.3e}",
        "",
        "final evaluation rows:",
        eval_tail[0],
        *eval_tail[-2:],
    ]
    (report / "summary.txt").write_text("\n".join(lines) + "\n")

    _write_panels(run, report, config, n_panels)
    return report


def _write_panels(run: Path, report: Path, config: TrainConfig, n_panels: int) -> None:
    student, _, _ = load_checkpoint(run / "checkpoint_student.bin")
    teacher, _, _ = load_checkpoint(run / "checkpoint_teacher.bin")
    net_cfg = config.net_config()
    scene_cfg = config.scene_config()
    palette = default_palette(config.n_classes)
    scenes = [generate_scene(scene_cfg, _seed_from(config.seed, 1, i))
              for i in range(min(n_panels, config.n_eval))]
    images = np.stack([s.image.transpose(2, 0, 1) for s in scenes]).astype(
        config.np_dtype())
    with _no_grad(student):
        logits, _ = forward(student, images, net_cfg)
    pred = np.argmax(logits.data, axis=1)
    with _no_grad(teacher):
        t_logits, _ = forward(teacher, images, net_cfg)
    t_probs = softmax(t_logits, axis=1).data.astype(np.float64)

    for i, scene in enumerate(scenes):
        (report / f"panel{i}.image.ppm").write_bytes(image_to_ppm(scene.image))
        (report / f"panel{i}.truth.ppm").write_bytes(labels_to_ppm(scene.labels, palette))
        (report / f"panel{i}.pred.ppm").write_bytes(labels_to_ppm(pred[i], palette))
        entropy = normalized_entropy(t_probs[i])
        (report / f"panel{i}.entropy.pgm").write_bytes(export_pgm(entropy))
        (report / f"panel{i}.weight.pgm").write_bytes(
            export_pgm(pixel_weights(entropy, config.entropy_threshold)))
