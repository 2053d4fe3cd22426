import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cnnbench.augment import (
    INVENTORY,
    AugmentationSpec,
    adjust_brightness,
    adjust_contrast,
    adjust_saturation,
    augment_image,
    build_augmenter,
    crop_resize,
    elastic,
    expand_training_set,
    hflip,
    rotate,
    rotate_right_angle,
    sample_plan,
    shear,
    shift_intensity,
    skew,
    vflip,
)
from cnnbench.data import SplitSpec, decode_rgb, scan_dataset, split_manifest
from cnnbench.errors import AlreadyExpanded, DataError, InvalidSpec, VariantOutOfRange

from conftest import make_class_dirs

images = st.tuples(st.integers(2, 12), st.integers(2, 12)).flatmap(
    lambda hw: arrays(np.uint8, (*hw, 3)))
square_images = st.integers(2, 12).flatmap(lambda n: arrays(np.uint8, (n, n, 3)))


def rot90_ccw_oracle(img):
    """out[i, j] = in[j, W-1-i], written as explicit loops."""
    h, w = img.shape[:2]
    out = np.zeros((w, h, 3), dtype=img.dtype)
    for i in range(w):
        for j in range(h):
            out[i, j] = img[j, w - 1 - i]
    return out


class TestPrimitives:
    @settings(max_examples=50, deadline=None)
    @given(images)
    def test_double_flip_is_identity(self, img):
        np.testing.assert_array_equal(hflip(hflip(img)), img)
        np.testing.assert_array_equal(vflip(vflip(img)), img)

    @settings(max_examples=50, deadline=None)
    @given(images)
    def test_hflip_loop(self, img):
        w = img.shape[1]
        out = hflip(img)
        for j in range(w):
            np.testing.assert_array_equal(out[:, j], img[:, w - 1 - j])

    @settings(max_examples=50, deadline=None)
    @given(square_images)
    def test_right_angle_against_index_oracle(self, img):
        np.testing.assert_array_equal(rotate_right_angle(img, 90), rot90_ccw_oracle(img))
        np.testing.assert_array_equal(rotate_right_angle(img, 180), rot90_ccw_oracle(rot90_ccw_oracle(img)))
        four = img
        for _ in range(4):
            four = rotate_right_angle(four, 90)
        np.testing.assert_array_equal(four, img)

    @settings(max_examples=30, deadline=None)
    @given(square_images)
    def test_free_rotation_by_90_agrees_with_right_angle(self, img):
        np.testing.assert_array_equal(rotate(img, 90.0), rotate_right_angle(img, 90))

    def test_right_angle_keeps_shape_for_rectangles(self):
        img = np.random.default_rng(0).integers(0, 256, (10, 16, 3), dtype=np.uint8)
        assert rotate_right_angle(img, 90).shape == img.shape

    @settings(max_examples=30, deadline=None)
    @given(images)
    def test_neutral_parameters_are_identity(self, img):
        np.testing.assert_array_equal(rotate(img, 0.0), img)
        np.testing.assert_array_equal(shear(img, 0.0), img)
        np.testing.assert_array_equal(skew(img, 0.0, 2), img)
        np.testing.assert_array_equal(crop_resize(img, 1.0, 0.3, 0.7), img)
        np.testing.assert_array_equal(elastic(img, np.zeros((2, 4, 4))), img)
        np.testing.assert_array_equal(adjust_brightness(img, 1.0), img)
        np.testing.assert_array_equal(adjust_contrast(img, 1.0), img)
        np.testing.assert_array_equal(adjust_saturation(img, 1.0), img)
        np.testing.assert_array_equal(shift_intensity(img, 0.0), img)

    def test_brightness_scales_and_clips(self):
        img = np.array([[[100, 200, 50]]], dtype=np.uint8)
        np.testing.assert_array_equal(adjust_brightness(img, 1.2), [[[120, 240, 60]]])
        np.testing.assert_array_equal(adjust_brightness(img, 2.0), [[[200, 255, 100]]])

    def test_saturation_zero_is_gray(self):
        img = np.random.default_rng(1).integers(0, 256, (5, 5, 3), dtype=np.uint8)
        out = adjust_saturation(img, 0.0).astype(int)
        assert np.all(np.abs(out - out[..., :1]) <= 1)

    def test_outputs_keep_shape_and_dtype(self):
        img = np.random.default_rng(2).integers(0, 256, (20, 30, 3), dtype=np.uint8)
        aug = build_augmenter(AugmentationSpec())
        for v in range(10):
            out = augment_image(aug, img, "x", v)
            assert out.shape == img.shape and out.dtype == np.uint8


class TestPlans:
    def test_deterministic_per_sample_variant(self):
        aug = build_augmenter(AugmentationSpec(seed=3))
        img = np.random.default_rng(0).integers(0, 256, (16, 16, 3), dtype=np.uint8)
        a = augment_image(aug, img, "benign__1", 4)
        # interleave unrelated draws; result must not change
        augment_image(aug, img, "other", 0)
        b = augment_image(build_augmenter(AugmentationSpec(seed=3)), img, "benign__1", 4)
        np.testing.assert_array_equal(a, b)

    def test_plan_size_and_order(self):
        aug = build_augmenter(AugmentationSpec())
        for v in range(10):
            for sid in ("a", "b", "c"):
                names = [n for n, _ in sample_plan(aug, sid, v)]
                assert 1 <= len(names) <= 3
                assert names == sorted(names, key=INVENTORY.index)

    def test_identity_spec_has_empty_plan(self):
        aug = build_augmenter(AugmentationSpec.identity())
        assert aug.transforms == ()
        assert sample_plan(aug, "x", 0) == []

    def test_variant_out_of_range(self):
        aug = build_augmenter(AugmentationSpec(variants_per_image=2))
        with pytest.raises(VariantOutOfRange):
            sample_plan(aug, "x", 2)

    @pytest.mark.parametrize("kw", [
        {"rotation_deg": (10.0, -10.0)}, {"crop_scale": (0.5, 1.5)}, {"distortion": 0.2},
        {"right_angle_rotations": (45,)}, {"flips": ("diagonal",)}, {"variants_per_image": -1},
    ])
    def test_invalid_spec(self, kw):
        with pytest.raises(InvalidSpec):
            build_augmenter(AugmentationSpec(**kw))

    def test_dict_round_trip(self):
        spec = AugmentationSpec(seed=9, flips=("horizontal",))
        assert AugmentationSpec.from_dict(spec.to_dict()) == spec


@pytest.fixture()
def split37(tmp_path):
    root = make_class_dirs(tmp_path / "ds", {"benign": 20, "malignant": 17}, size=(12, 12))
    # everything into train so exactly 37 originals are expanded
    return split_manifest(scan_dataset(root), SplitSpec(1.0, 0.0, 0.0))


class TestExpand:
    def test_count_and_parents(self, split37, tmp_path):
        out = expand_training_set(split37, build_augmenter(AugmentationSpec()), tmp_path / "aug")
        augmented = [s for s in out.samples if s.origin == "augmented"]
        assert len(augmented) == 370
        assert len(list((tmp_path / "aug").rglob("*.png"))) == 370
        originals = {s.id: s for s in out.samples if s.origin == "original"}
        for s in augmented:
            assert s.parent_id in originals
            assert s.label == originals[s.parent_id].label and s.split == "train"

    def test_val_test_untouched(self, tmp_path):
        root = make_class_dirs(tmp_path / "ds", {"benign": 10, "malignant": 10}, size=(12, 12))
        m = split_manifest(scan_dataset(root), SplitSpec())
        out = expand_training_set(m, build_augmenter(AugmentationSpec(variants_per_image=3)), tmp_path / "aug")
        n_train = sum(1 for s in m.samples if s.split == "train")
        assert sum(1 for s in out.samples if s.origin == "augmented") == 3 * n_train
        assert all(s.split == "train" for s in out.samples if s.origin == "augmented")
        for split in ("val", "test"):
            assert [s for s in out.samples if s.split == split] == [s for s in m.samples if s.split == split]

    def test_identity_spec_pixel_equal(self, split37, tmp_path):
        out = expand_training_set(split37, build_augmenter(AugmentationSpec.identity(variants_per_image=2)), tmp_path / "aug")
        by_id = out.by_id()
        for s in out.samples:
            if s.origin == "augmented":
                np.testing.assert_array_equal(decode_rgb(s.path), decode_rgb(by_id[s.parent_id].path))

    def test_k_zero_is_noop(self, split37, tmp_path):
        out = expand_training_set(split37, build_augmenter(AugmentationSpec(variants_per_image=0)), tmp_path / "aug")
        assert out.samples == split37.samples
        assert any("k=0" in n for n in out.notes)
        assert not (tmp_path / "aug").exists()

    def test_already_expanded(self, split37, tmp_path):
        aug = build_augmenter(AugmentationSpec(variants_per_image=1))
        once = expand_training_set(split37, aug, tmp_path / "aug")
        with pytest.raises(AlreadyExpanded):
            expand_training_set(once, aug, tmp_path / "aug2")

    def test_unsplit_rejected(self, tmp_path):
        root = make_class_dirs(tmp_path / "ds", {"a": 2, "b": 2})
        with pytest.raises(DataError):
            expand_training_set(scan_dataset(root), build_augmenter(AugmentationSpec()), tmp_path / "aug")

    def test_workers_do_not_change_output(self, split37, tmp_path):
        aug = build_augmenter(AugmentationSpec(variants_per_image=2, seed=5))
        a = expand_training_set(split37, aug, tmp_path / "a", workers=1)
        b = expand_training_set(split37, aug, tmp_path / "b", workers=4)
        for sa, sb in zip(a.samples, b.samples):
            assert sa.id == sb.id
            if sa.origin == "augmented":
                np.testing.assert_array_equal(decode_rgb(sa.path), decode_rgb(sb.path))
