"""Acceptance suite: the ten release gates, one test per criterion.

Each test prints one PASS line with its measured figures (visible with
`pytest -s`, and mirrored by the per-test PASSED/FAILED verdicts of
`pytest -v`). Criteria 1-7 are property checks shared with `fuzzyseg
verify`; 8-10 run the desk-scale experiments, so this module is the slow
part of the suite: the headline comparison alone trains six models.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from fuzzyseg import verify
from fuzzyseg.harness import (
    ABLATION_VARIANTS,
    TrainConfig,
    run_ablation,
    run_training,
)
from fuzzyseg.report import convergence_stats, read_loss_csv


def _check(name: str, fn, budget_s: float | None = None, **kwargs):
    tic = time.perf_counter()
    ok, detail = fn(**kwargs)
    elapsed = time.perf_counter() - tic
    assert ok, f"{name}: {detail}"
    if budget_s is not None:
        assert elapsed < budget_s, f"{name} took {elapsed:.1f}s, budget {budget_s}s"
    print(f"PASS {name}: {detail} ({elapsed:.1f}s)")


# -- property gates ------------------------------------------------------


def test_criterion_01_fuzzy_label_suite():
    _check("criterion 1, fuzzy labels", verify.check_fuzzy_suite, budget_s=10.0)


def test_criterion_02_entropy_and_weights():
    _check("criterion 2, entropy and weights", verify.check_entropy_suite,
           budget_s=10.0)


def test_criterion_03_rebalance_oracle():
    _check("criterion 3, rebalancing oracle", verify.check_rebalance_oracle,
           budget_s=5.0)


def test_criterion_04_gradient_gate():
    _check("criterion 4, finite-difference gradient gate",
           verify.check_gradient_gate, budget_s=300.0)


def test_criterion_05_kl_properties():
    _check("criterion 5, consistency KL properties", verify.check_kl_properties)


def test_criterion_06_ema_contraction():
    _check("criterion 6, EMA contraction", verify.check_ema_contraction)


def test_criterion_07_miou_oracle():
    _check("criterion 7, mIoU oracle", verify.check_miou_oracle)


# -- desk-scale experiments ----------------------------------------------


SEEDS = (0, 1, 2)
SUPERVISED = dict(semi_enabled=False, contrastive_enabled=False)


@pytest.fixture(scope="module")
def headline(tmp_path_factory):
    """Train semi and supervised arms on the default benchmark, three seeds."""
    out = tmp_path_factory.mktemp("headline")
    tic = time.perf_counter()
    results = {}
    for seed in SEEDS:
        for arm, toggles in (("semi", {}), ("sup", SUPERVISED)):
            cfg = TrainConfig(seed=seed, **toggles)
            results[(arm, seed)] = run_training(cfg, out / f"{arm}{seed}")
    return results, time.perf_counter() - tic


def test_criterion_08_headline_experiment(headline):
    results, elapsed = headline
    semi_miou = np.mean([results[("semi", s)].final_student.miou for s in SEEDS])
    sup_miou = np.mean([results[("sup", s)].final_student.miou for s in SEEDS])
    semi_tri = np.mean([results[("semi", s)].final_student.iou[3] for s in SEEDS])
    sup_tri = np.mean([results[("sup", s)].final_student.iou[3] for s in SEEDS])

    assert elapsed <= 1800.0, f"headline took {elapsed:.0f}s, budget 1800s"
    assert semi_miou >= sup_miou + 0.02, \
        f"mIoU {semi_miou:.4f} vs supervised {sup_miou:.4f}: margin below 2 points"
    assert semi_tri >= sup_tri + 0.03, \
        f"triangle IoU {semi_tri:.4f} vs supervised {sup_tri:.4f}: margin below 3 points"
    print(f"PASS criterion 8, headline: semi mIoU {semi_miou:.4f} vs supervised "
          f"{sup_miou:.4f} (+{100 * (semi_miou - sup_miou):.1f} points), triangle "
          f"{semi_tri:.4f} vs {sup_tri:.4f} (+{100 * (semi_tri - sup_tri):.1f} "
          f"points), {elapsed:.0f}s")


def test_criterion_09_convergence_shape(headline):
    results, _ = headline
    cols = read_loss_csv(results[("semi", 0)].loss_csv)
    stats = convergence_stats(cols["loss_total"], cols["loss_s"])
    ratio = stats.total_final / stats.total_at_reference
    slope_ratio = abs(stats.ls_slope_final) / abs(stats.ls_slope_initial)
    assert ratio <= 0.5, \
        f"smoothed total only fell to {100 * ratio:.0f}% of its iter-200 value"
    assert slope_ratio < 0.1, \
        f"final L_s slope is {100 * slope_ratio:.1f}% of the initial slope"
    print(f"PASS criterion 9, convergence: final/ref {ratio:.3f}, "
          f"slope ratio {slope_ratio:.4f}")


def test_criterion_10_ablation_determinism(tmp_path):
    base = TrainConfig(
        seed=0, dtype="float32", image_size=16, n_train=8, n_eval=2,
        labeled_fraction=0.25, base_width=4, depth=2, embed_dim=4,
        epochs=2, labeled_batch=2, unlabeled_batch=2, eval_every=2)

    first = run_ablation(base, seeds=[0], out_dir=tmp_path / "a")
    assert len(first.runs) == len(ABLATION_VARIANTS) == 6
    second = run_ablation(base, seeds=[0], out_dir=tmp_path / "b")
    for name in ("ablation_summary.csv", "ablation_table.txt"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes(), f"{name} not deterministic"

    # the component-free variant must be indistinguishable from a plain
    # supervised run of the same seed
    supervised = run_training(replace(base, **SUPERVISED), tmp_path / "sup")
    for name in ("loss.csv", "eval.csv", "checkpoint_student.bin",
                 "checkpoint_teacher.bin"):
        assert (tmp_path / "a" / "baseline" / "seed0" / name).read_bytes() == \
            (supervised.out_dir / name).read_bytes(), f"baseline {name} differs"
    print("PASS criterion 10, ablation: 6 variants deterministic, "
          "baseline bit-identical to the supervised run")
