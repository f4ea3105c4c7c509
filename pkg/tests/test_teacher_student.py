"""Tests for the teacher-student pairing and the augmentation pipeline.

The geometric checks lean on two exact facts: bilinear interpolation
reproduces a linear ramp exactly, and every transform here maps output
pixels to source coordinates by an affine formula we can recompute by hand.
"""

import numpy as np
import pytest

from fuzzyseg.data import IGNORE
from fuzzyseg.teacher_student import (
    AugmentationSpec,
    ParameterStore,
    apply_augmentation,
    complementary_channel_masks,
    ema_update,
    strong_spec,
    weak_spec,
)
from fuzzyseg.tensorkit import Tensor


def make_store(seed=0, role="student", requires_grad=True):
    rng = np.random.default_rng(seed)
    entries = {
        "enc.w": Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=requires_grad),
        "enc.b": Tensor(rng.standard_normal(4), requires_grad=requires_grad),
        "cls.w": Tensor(rng.standard_normal((2, 4, 1, 1)), requires_grad=requires_grad),
    }
    return ParameterStore(entries=entries, role=role)


# -- parameter store -----------------------------------------------------


class TestParameterStore:
    def test_names_preserve_insertion_order(self):
        store = make_store()
        assert store.names() == ["enc.w", "enc.b", "cls.w"]

    def test_getitem_unknown_name(self):
        store = make_store(role="teacher")
        with pytest.raises(KeyError, match="teacher"):
            store["missing.w"]

    def test_rejects_non_tensor_entry(self):
        with pytest.raises(TypeError):
            ParameterStore(entries={"w": np.zeros(3)})

    def test_clone_copies_values_and_flags(self):
        store = make_store()
        twin = store.clone(role="teacher", requires_grad=False)
        assert twin.role == "teacher"
        for name in store.names():
            assert np.array_equal(twin[name].data, store[name].data)
            assert not twin[name].requires_grad

    def test_clone_is_independent_storage(self):
        store = make_store()
        twin = store.clone(role="teacher", requires_grad=False)
        twin["enc.b"].data[0] += 1.0
        assert store["enc.b"].data[0] != twin["enc.b"].data[0]

    def test_zero_grads(self):
        store = make_store()
        for t in store.entries.values():
            t.grad = np.ones_like(t.data)
        store.zero_grads()
        assert all(t.grad is None for t in store.entries.values())

    def test_astype(self):
        store = make_store()
        store.astype(np.float32)
        assert all(t.data.dtype == np.float32 for t in store.entries.values())

    def test_n_params(self):
        store = make_store()
        assert store.n_params() == 4 * 3 * 3 * 3 + 4 + 2 * 4

    def test_digest_tracks_content(self):
        a = make_store()
        b = make_store()
        assert a.digest() == b.digest()
        b["cls.w"].data[0, 0, 0, 0] += 1e-9
        assert a.digest() != b.digest()

    def test_digest_depends_on_names(self):
        a = make_store()
        renamed = {("x" + k): v for k, v in a.entries.items()}
        b = ParameterStore(entries=renamed)
        assert a.digest() != b.digest()

    def test_assert_compatible(self):
        a = make_store()
        a.assert_compatible(a.clone("teacher", False))
        with pytest.raises(ValueError, match="names"):
            a.assert_compatible(ParameterStore(entries={"w": Tensor(np.zeros(3))}))
        bad = a.clone("teacher", False)
        bad.entries["enc.b"] = Tensor(np.zeros(5))
        with pytest.raises(ValueError, match="shape"):
            a.assert_compatible(bad)


# -- ema -----------------------------------------------------------------


class TestEmaUpdate:
    def test_hand_case(self):
        teacher = ParameterStore(entries={"w": Tensor(np.array([1.0]))}, role="teacher")
        student = ParameterStore(entries={"w": Tensor(np.array([0.0]))})
        ema_update(teacher, student, alpha=0.99)
        assert teacher["w"].data[0] == pytest.approx(0.99, abs=1e-15)
        ema_update(teacher, student, alpha=0.99)
        assert teacher["w"].data[0] == pytest.approx(0.9801, abs=1e-15)

    def test_closed_form_contraction(self):
        # with the student frozen, t_k - s = alpha^k (t_0 - s) exactly
        alpha = 0.9
        teacher = make_store(seed=1, role="teacher", requires_grad=False)
        student = make_store(seed=2)
        start = {n: t.data.copy() for n, t in teacher.entries.items()}
        for k in range(1, 6):
            ema_update(teacher, student, alpha)
            for name in teacher.names():
                expected = student[name].data + alpha ** k * (start[name] - student[name].data)
                np.testing.assert_allclose(teacher[name].data, expected, atol=1e-12)

    def test_alpha_bounds(self):
        teacher = make_store(role="teacher")
        student = make_store()
        for alpha in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                ema_update(teacher, student, alpha)

    def test_incompatible_stores(self):
        teacher = make_store(role="teacher")
        student = ParameterStore(entries={"w": Tensor(np.zeros(3))})
        with pytest.raises(ValueError):
            ema_update(teacher, student, 0.99)


# -- augmentation specs --------------------------------------------------


class TestAugmentationSpec:
    def test_weak_spec_defaults(self):
        spec = weak_spec()
        assert spec.kind == "weak"
        assert spec.scale_range == (0.85, 1.15)
        assert spec.flip_prob == 0.5
        assert spec.translate_jitter == 0 and spec.noise_sigma == 0.0

    def test_strong_spec_defaults(self):
        spec = strong_spec()
        assert spec.kind == "strong"
        assert spec.translate_jitter == 6
        assert spec.brightness_range == (0.6, 1.4)
        assert spec.noise_sigma == 0.05

    def test_weak_rejects_photometric_and_jitter(self):
        with pytest.raises(ValueError, match="weak"):
            AugmentationSpec(kind="weak", translate_jitter=2)
        with pytest.raises(ValueError, match="weak"):
            AugmentationSpec(kind="weak", brightness_range=(0.9, 1.1))
        with pytest.raises(ValueError, match="weak"):
            AugmentationSpec(kind="weak", noise_sigma=0.01)
        with pytest.raises(ValueError, match="weak"):
            AugmentationSpec(kind="weak", out_size=32)

    def test_invalid_ranges(self):
        with pytest.raises(ValueError):
            AugmentationSpec(kind="mild")
        with pytest.raises(ValueError):
            AugmentationSpec(kind="strong", scale_range=(0.0, 1.0))
        with pytest.raises(ValueError):
            AugmentationSpec(kind="strong", scale_range=(1.2, 0.8))
        with pytest.raises(ValueError):
            AugmentationSpec(kind="strong", flip_prob=1.5)
        with pytest.raises(ValueError):
            AugmentationSpec(kind="strong", noise_sigma=-0.1)
        with pytest.raises(ValueError):
            AugmentationSpec(kind="strong", out_size=0)


# -- geometric correctness -----------------------------------------------


def ramp_image(h, w):
    """Channel 0 is a y ramp, channel 1 an x ramp; linear, so bilinear is exact."""
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    img = np.zeros((h, w, 3))
    img[..., 0] = yy / (h - 1)
    img[..., 1] = xx / (w - 1)
    img[..., 2] = 0.25
    return img


IDENTITY = AugmentationSpec(kind="weak", scale_range=(1.0, 1.0), flip_prob=0.0)


class TestApplyAugmentation:
    def test_identity_is_exact(self):
        rng = np.random.default_rng(0)
        img = rng.random((8, 8, 3))
        labels = rng.integers(0, 4, size=(8, 8))
        res = apply_augmentation(img, labels, IDENTITY, seed=3)
        np.testing.assert_array_equal(res.image, img)
        np.testing.assert_array_equal(res.labels, labels)
        assert res.valid.all()

    def test_deterministic_in_seed(self):
        rng = np.random.default_rng(1)
        img = rng.random((10, 10, 3))
        labels = rng.integers(0, 4, size=(10, 10))
        a = apply_augmentation(img, labels, strong_spec(), seed=7)
        b = apply_augmentation(img, labels, strong_spec(), seed=7)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.labels, b.labels)
        c = apply_augmentation(img, labels, strong_spec(), seed=8)
        assert not np.array_equal(a.image, c.image)

    def test_forced_flip_mirrors_both_modalities(self):
        spec = AugmentationSpec(kind="weak", scale_range=(1.0, 1.0), flip_prob=1.0)
        rng = np.random.default_rng(2)
        img = rng.random((6, 9, 3))
        labels = rng.integers(0, 4, size=(6, 9))
        res = apply_augmentation(img, labels, spec, seed=0)
        np.testing.assert_array_equal(res.image, img[:, ::-1])
        np.testing.assert_array_equal(res.labels, labels[:, ::-1])
        assert res.valid.all()

    def test_zoom_in_matches_inverse_map(self):
        # scale 2 about the center: src = (out - c) / 2 + c
        h = w = 9
        img = ramp_image(h, w)
        spec = AugmentationSpec(kind="weak", scale_range=(2.0, 2.0), flip_prob=0.0)
        res = apply_augmentation(img, None, spec, seed=5)
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        src_y = (yy - 4.0) / 2.0 + 4.0
        src_x = (xx - 4.0) / 2.0 + 4.0
        assert res.valid.all()
        np.testing.assert_allclose(res.geometry.src_y, src_y, atol=1e-12)
        np.testing.assert_allclose(res.image[..., 0], src_y / (h - 1), atol=1e-12)
        np.testing.assert_allclose(res.image[..., 1], src_x / (w - 1), atol=1e-12)

    def test_zoom_in_labels_use_nearest(self):
        h = w = 9
        labels = np.arange(h * w).reshape(h, w)
        spec = AugmentationSpec(kind="weak", scale_range=(2.0, 2.0), flip_prob=0.0)
        res = apply_augmentation(ramp_image(h, w), labels, spec, seed=5)
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        iy = np.rint((yy - 4.0) / 2.0 + 4.0).astype(int)
        ix = np.rint((xx - 4.0) / 2.0 + 4.0).astype(int)
        np.testing.assert_array_equal(res.labels, labels[iy, ix])

    def test_zoom_out_pads_with_invalid(self):
        h = w = 8
        img = ramp_image(h, w)
        labels = np.zeros((h, w), dtype=np.int64)
        spec = AugmentationSpec(kind="weak", scale_range=(0.5, 0.5), flip_prob=0.0)
        res = apply_augmentation(img, labels, spec, seed=1)
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        src_y = (yy - 3.5) / 0.5 + 3.5
        src_x = (xx - 3.5) / 0.5 + 3.5
        expected_valid = ((src_y >= 0) & (src_y <= h - 1)
                          & (src_x >= 0) & (src_x <= w - 1))
        np.testing.assert_array_equal(res.valid, expected_valid)
        assert expected_valid.any() and not expected_valid.all()
        np.testing.assert_array_equal(res.labels[~expected_valid],
                                      np.full((~expected_valid).sum(), IGNORE))
        assert (res.image[~expected_valid] == 0.0).all()

    def test_translation_keeps_labels_aligned(self):
        # with scale 1 the jittered grid lands on integers, so bilinear
        # equals nearest and image/label pairs must agree exactly
        spec = AugmentationSpec(kind="strong", scale_range=(1.0, 1.0),
                                flip_prob=0.0, translate_jitter=5)
        h = w = 12
        rng = np.random.default_rng(3)
        img = rng.random((h, w, 3))
        labels = rng.integers(0, 4, size=(h, w))
        for seed in range(8):
            res = apply_augmentation(img, labels, spec, seed=seed)
            iy, ix = res.geometry.nearest_indices()
            v = res.valid
            np.testing.assert_allclose(res.geometry.src_y[v], iy[v], atol=1e-12)
            np.testing.assert_array_equal(res.image[v], img[iy[v], ix[v]])
            np.testing.assert_array_equal(res.labels[v], labels[iy[v], ix[v]])
            np.testing.assert_array_equal(res.labels[~v],
                                          np.full((~v).sum(), IGNORE))

    def test_out_size_crops_about_center(self):
        spec = AugmentationSpec(kind="strong", scale_range=(1.0, 1.0),
                                flip_prob=0.0, out_size=12)
        img = ramp_image(8, 8)
        res = apply_augmentation(img, None, spec, seed=0)
        assert res.image.shape == (12, 12, 3)
        assert res.valid.shape == (12, 12)
        # window is wider than the source, so the border is padding
        assert not res.valid[0, 0] and res.valid[6, 6]
        np.testing.assert_allclose(res.geometry.src_y[:, 0],
                                   np.arange(12) - 5.5 + 3.5, atol=1e-12)

    def test_contrast_formula(self):
        spec = AugmentationSpec(kind="strong", scale_range=(1.0, 1.0),
                                flip_prob=0.0, contrast_range=(0.8, 0.8))
        rng = np.random.default_rng(4)
        img = rng.random((6, 6, 3))
        res = apply_augmentation(img, None, spec, seed=9)
        np.testing.assert_allclose(res.image, (img - 0.5) * 0.8 + 0.5, atol=1e-12)

    def test_brightness_formula(self):
        spec = AugmentationSpec(kind="strong", scale_range=(1.0, 1.0),
                                flip_prob=0.0, brightness_range=(1.2, 1.2))
        rng = np.random.default_rng(5)
        img = rng.random((6, 6, 3)) * 0.8   # keep 1.2 * img below the clip
        res = apply_augmentation(img, None, spec, seed=9)
        np.testing.assert_allclose(res.image, img * 1.2, atol=1e-12)

    def test_photometric_clips_to_unit_range(self):
        spec = AugmentationSpec(kind="strong", scale_range=(1.0, 1.0),
                                flip_prob=0.0, brightness_range=(1.4, 1.4))
        img = np.full((4, 4, 3), 0.9)
        res = apply_augmentation(img, None, spec, seed=0)
        np.testing.assert_array_equal(res.image, np.ones((4, 4, 3)))

    def test_noise_statistics(self):
        spec = AugmentationSpec(kind="strong", scale_range=(1.0, 1.0),
                                flip_prob=0.0, noise_sigma=0.05)
        img = np.full((64, 64, 3), 0.5)
        res = apply_augmentation(img, None, spec, seed=11)
        diff = res.image - img
        assert abs(diff.mean()) < 0.002
        assert abs(diff.std() - 0.05) < 0.005

    def test_input_validation(self):
        with pytest.raises(ValueError, match="image"):
            apply_augmentation(np.zeros((8, 8)), None, IDENTITY, seed=0)
        with pytest.raises(ValueError, match="labels"):
            apply_augmentation(np.zeros((8, 8, 3)), np.zeros((4, 4), dtype=int),
                               IDENTITY, seed=0)


class TestWarpNearest:
    def test_channel_maps_follow_the_flip(self):
        spec = AugmentationSpec(kind="weak", scale_range=(1.0, 1.0), flip_prob=1.0)
        res = apply_augmentation(np.zeros((5, 7, 3)), None, spec, seed=0)
        rng = np.random.default_rng(6)
        fuzzy = rng.random((3, 5, 7))
        np.testing.assert_array_equal(res.geometry.warp_nearest(fuzzy),
                                      fuzzy[..., ::-1])

    def test_fill_value_outside_frame(self):
        spec = AugmentationSpec(kind="weak", scale_range=(0.5, 0.5), flip_prob=0.0)
        res = apply_augmentation(np.zeros((8, 8, 3)), None, spec, seed=0)
        warped = res.geometry.warp_nearest(np.ones((8, 8)), fill=-1.0)
        np.testing.assert_array_equal(warped[~res.valid],
                                      np.full((~res.valid).sum(), -1.0))
        np.testing.assert_array_equal(warped[res.valid],
                                      np.ones(res.valid.sum()))

    def test_indices_stay_in_frame(self):
        spec = AugmentationSpec(kind="weak", scale_range=(0.5, 0.5), flip_prob=0.0)
        res = apply_augmentation(np.zeros((8, 8, 3)), None, spec, seed=0)
        iy, ix = res.geometry.nearest_indices()
        assert iy.min() >= 0 and iy.max() <= 7
        assert ix.min() >= 0 and ix.max() <= 7

    def test_shape_mismatch(self):
        res = apply_augmentation(np.zeros((8, 8, 3)), None, IDENTITY, seed=0)
        with pytest.raises(ValueError, match="shape"):
            res.geometry.warp_nearest(np.zeros((4, 4)))


# -- channel masks -------------------------------------------------------


class TestComplementaryChannelMasks:
    def test_masks_are_exact_complements(self):
        m0, m1 = complementary_channel_masks(4, 16, keep_prob=0.5, seed=0)
        assert m0.shape == m1.shape == (4, 16)
        np.testing.assert_array_equal(m0 + m1, np.ones((4, 16)))
        assert set(np.unique(m0)) <= {0.0, 1.0}

    def test_keep_prob_one_keeps_everything(self):
        m0, m1 = complementary_channel_masks(3, 8, keep_prob=1.0, seed=1)
        np.testing.assert_array_equal(m0, np.ones((3, 8)))
        np.testing.assert_array_equal(m1, np.zeros((3, 8)))

    def test_keep_fraction(self):
        m0, _ = complementary_channel_masks(100, 100, keep_prob=0.5, seed=2)
        assert abs(m0.mean() - 0.5) < 0.02

    def test_deterministic(self):
        a = complementary_channel_masks(4, 16, 0.5, seed=3)
        b = complementary_channel_masks(4, 16, 0.5, seed=3)
        np.testing.assert_array_equal(a[0], b[0])

    def test_validation(self):
        with pytest.raises(ValueError):
            complementary_channel_masks(0, 8, 0.5, seed=0)
        with pytest.raises(ValueError):
            complementary_channel_masks(4, 8, 0.0, seed=0)
        with pytest.raises(ValueError):
            complementary_channel_masks(4, 8, 1.1, seed=0)
