"""Tests for smoothed-loss summaries and report generation."""

import numpy as np
import pytest

from fuzzyseg.data import read_pgm, read_ppm
from fuzzyseg.harness import TrainConfig, run_training
from fuzzyseg.report import (
    convergence_stats,
    moving_average,
    read_loss_csv,
    write_report,
)


class TestMovingAverage:
    def test_window_one_is_identity(self):
        v = np.array([3.0, 1.0, 4.0, 1.0])
        np.testing.assert_array_equal(moving_average(v, window=1), v)

    def test_wide_window_is_running_mean(self):
        out = moving_average(np.array([1.0, 2.0, 3.0]), window=100)
        np.testing.assert_allclose(out, [1.0, 1.5, 2.0], atol=1e-12)

    def test_trailing_window(self):
        out = moving_average(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), window=2)
        np.testing.assert_allclose(out, [1.0, 1.5, 2.5, 3.5, 4.5], atol=1e-12)

    def test_constant_series(self):
        out = moving_average(np.full(10, 7.0), window=4)
        np.testing.assert_allclose(out, 7.0, atol=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            moving_average(np.array([]))
        with pytest.raises(ValueError):
            moving_average(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            moving_average(np.ones(3), window=0)


class TestConvergenceStats:
    def test_linear_decay_slopes(self):
        # raw slope -0.025/iter; the trailing mean halves the slope while
        # the window fills, then tracks it
        series = np.linspace(10.0, 0.0, 401)
        stats = convergence_stats(series, series, reference_iteration=200,
                                  window=100)
        assert stats.reference_iteration == 200
        assert stats.total_final < stats.total_at_reference
        assert stats.ls_slope_initial == pytest.approx(-0.025 / 2, rel=1e-6)
        assert stats.ls_slope_final == pytest.approx(-0.025, rel=1e-6)

    def test_exponential_decay_halves(self):
        i = np.arange(2000)
        series = 2.0 * np.exp(-i / 300.0) + 0.1
        stats = convergence_stats(series, series)
        assert stats.total_final <= 0.5 * stats.total_at_reference

    def test_short_series_clamps_reference(self):
        stats = convergence_stats(np.ones(50), np.ones(50), reference_iteration=200)
        assert stats.reference_iteration == 49

    def test_flat_series_has_zero_slopes(self):
        stats = convergence_stats(np.ones(400), np.ones(400))
        assert stats.ls_slope_initial == 0.0
        assert stats.ls_slope_final == 0.0


class TestReadLossCsv:
    def test_columns(self, tmp_path):
        path = tmp_path / "loss.csv"
        path.write_text("iter,lr,loss_total\n0,0.1,2.5\n1,0.09,2.25\n")
        cols = read_loss_csv(path)
        np.testing.assert_array_equal(cols["iter"], [0.0, 1.0])
        np.testing.assert_allclose(cols["loss_total"], [2.5, 2.25], atol=1e-12)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("iter,lr\n")
        with pytest.raises(ValueError, match="no data rows"):
            read_loss_csv(path)


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    cfg = TrainConfig(
        seed=0, dtype="float64", image_size=16, n_train=6, n_eval=2,
        labeled_fraction=0.5, base_width=4, depth=2, embed_dim=4,
        epochs=1, labeled_batch=2, unlabeled_batch=2, eval_every=1)
    out = tmp_path_factory.mktemp("run")
    run_training(cfg, out)
    return out, cfg


class TestWriteReport:
    def test_artifacts(self, finished_run):
        run_dir, cfg = finished_run
        report = write_report(run_dir)
        summary = (report / "summary.txt").read_text()
        assert "iterations=2" in summary
        assert "ls_slope_initial=" in summary
        # panels are capped by the eval set size
        for i in range(cfg.n_eval):
            for suffix in ("image.ppm", "truth.ppm", "pred.ppm"):
                assert read_ppm(report / f"panel{i}.{suffix}").shape == (16, 16, 3)
            for suffix in ("entropy.pgm", "weight.pgm"):
                values = read_pgm(report / f"panel{i}.{suffix}")
                assert values.shape == (16, 16)
                assert values.min() >= 0.0 and values.max() <= 1.0
        assert not (report / f"panel{cfg.n_eval}.image.ppm").exists()
