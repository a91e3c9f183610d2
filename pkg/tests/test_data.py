import numpy as np
import pytest

from fcdensenet import data as data_mod
from fcdensenet.data import (
    LabeledSample, VOID_LABEL, class_colors, load_dataset, pad_to_multiple,
    random_crop, random_flip, save_dataset, synth_dataset,
)
from fcdensenet.exceptions import DatasetError
from fcdensenet.metrics import ConfusionAccumulator

from oracles import nearest_color_classify


def _sample(h=10, w=12, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledSample(
        image=rng.random((3, h, w), dtype=np.float32),
        labels=rng.integers(0, 3, size=(h, w)),
        name="s0",
    )


class TestRandomCrop:
    def test_full_size_crop_is_identity(self):
        s = _sample()
        out = random_crop(s, (10, 12), np.random.default_rng(0))
        assert np.array_equal(out.image, s.image)
        assert np.array_equal(out.labels, s.labels)

    def test_crop_larger_than_image_rejected(self):
        with pytest.raises(DatasetError, match="larger"):
            random_crop(_sample(), 16, np.random.default_rng(0))

    def test_marker_tracking_alignment(self):
        # the marked image pixel and the marked label always move together
        s = _sample(h=20, w=20, seed=1)
        my, mx = 13, 7
        s.image[:, my, mx] = 9.0
        s.labels[:] = 0
        s.labels[my, mx] = 2
        rng = np.random.default_rng(2)
        seen = 0
        for _ in range(1000):
            out = random_crop(s, 8, rng)
            marked = np.argwhere(out.image[0] == 9.0)
            for (i, j) in marked:
                seen += 1
                assert out.labels[i, j] == 2
            assert (out.labels == 2).sum() == len(marked)
        assert seen > 0


class TestRandomFlip:
    def test_double_forced_flip_is_identity(self):
        s = _sample(seed=3)
        once = random_flip(s, np.random.default_rng(0), p=1.0)
        twice = random_flip(once, np.random.default_rng(0), p=1.0)
        assert np.array_equal(twice.image, s.image)
        assert np.array_equal(twice.labels, s.labels)

    def test_horizontal_mirrors_width_axis(self):
        s = _sample(seed=4)
        out = random_flip(s, np.random.default_rng(0), axis="horizontal", p=1.0)
        assert np.array_equal(out.image, s.image[:, :, ::-1])
        assert np.array_equal(out.labels, s.labels[:, ::-1])

    def test_vertical_mirrors_height_axis(self):
        s = _sample(seed=5)
        out = random_flip(s, np.random.default_rng(0), axis="vertical", p=1.0)
        assert np.array_equal(out.image, s.image[:, ::-1, :])
        assert np.array_equal(out.labels, s.labels[::-1, :])

    def test_no_flip_below_probability(self):
        s = _sample(seed=6)
        out = random_flip(s, np.random.default_rng(0), p=0.0)
        assert out is s

    def test_invalid_axis(self):
        with pytest.raises(ValueError, match="axis"):
            random_flip(_sample(), np.random.default_rng(0), axis="diagonal")


class TestPadToMultiple:
    def test_already_multiple_is_identity(self):
        s = _sample(h=16, w=32)
        padded, original = pad_to_multiple(s, 16)
        assert padded is s
        assert original == (16, 32)

    def test_street_scene_geometry(self):
        s = _sample(h=360, w=480, seed=7)
        padded, original = pad_to_multiple(s, 32)
        assert padded.image.shape == (3, 384, 480)
        assert original == (360, 480)
        assert np.all(padded.labels[360:, :] == VOID_LABEL)
        assert np.array_equal(padded.labels[:360, :480], s.labels)
        assert np.all(padded.image[:, 360:, :] == 0.0)

    def test_metrics_unaffected_by_padding(self):
        # counting cropped predictions against original labels equals
        # counting full padded predictions against void-padded labels
        s = _sample(h=10, w=13, seed=8)
        padded, original = pad_to_multiple(s, 8)
        rng = np.random.default_rng(9)
        padded_pred = rng.integers(0, 3, size=padded.labels.shape)
        cropped_pred = data_mod.crop_prediction(padded_pred, original)
        a = ConfusionAccumulator(3).accumulate(cropped_pred, s.labels,
                                               VOID_LABEL)
        b = ConfusionAccumulator(3).accumulate(padded_pred, padded.labels,
                                               VOID_LABEL)
        assert np.array_equal(a.matrix, b.matrix)


class TestSynthDataset:
    def test_labels_always_valid(self):
        split = synth_dataset(6, image_size=32, n_classes=4,
                              rng=np.random.default_rng(0), n_val=2, n_test=2)
        assert split.n_classes == 4
        for s in split.train + split.val + split.test:
            real = s.labels[s.labels != VOID_LABEL]
            assert real.min() >= 0 and real.max() < 4
            assert s.image.min() >= 0.0 and s.image.max() <= 1.0

    def test_same_seed_is_bit_identical(self):
        a = synth_dataset(4, image_size=24, rng=np.random.default_rng(42),
                          n_val=2, n_test=2)
        b = synth_dataset(4, image_size=24, rng=np.random.default_rng(42),
                          n_val=2, n_test=2)
        for sa, sb in zip(a.train + a.val + a.test, b.train + b.val + b.test):
            assert np.array_equal(sa.image, sb.image)
            assert np.array_equal(sa.labels, sb.labels)

    def test_void_border_configurable(self):
        split = synth_dataset(1, image_size=40, rng=np.random.default_rng(1),
                              n_val=1, n_test=1, void_border=0.1)
        s = split.train[0]
        assert np.all(s.labels[:4, :] == VOID_LABEL)
        assert np.all(s.labels[-4:, :] == VOID_LABEL)
        none = synth_dataset(1, image_size=40, rng=np.random.default_rng(1),
                             n_val=1, n_test=1, void_border=0.0)
        assert not (none.train[0].labels == VOID_LABEL).any()

    def test_color_threshold_baseline_reaches_08_iou(self):
        # sanity: the task is learnable by trivial color matching
        split = synth_dataset(20, image_size=48, n_classes=3,
                              rng=np.random.default_rng(11), n_val=4, n_test=8)
        palette = class_colors(3)
        acc = ConfusionAccumulator(3)
        for s in split.test:
            pred = nearest_color_classify(s.image, palette)
            acc.accumulate(pred, s.labels, VOID_LABEL)
        assert acc.mean_iou() >= 0.8


class TestDiskRoundTrip:
    def test_round_trip_identity(self, tmp_path):
        split = synth_dataset(3, image_size=20, rng=np.random.default_rng(2),
                              n_val=1, n_test=1)
        # snap images to the 8-bit grid so the trip is lossless
        for s in split.train + split.val + split.test:
            s.image = np.round(s.image * 255.0).astype(np.float32) / 255.0
        save_dataset(split, tmp_path)
        loaded = load_dataset(tmp_path)
        assert loaded.n_classes == split.n_classes
        assert len(loaded.train) == 3 and len(loaded.val) == 1
        for orig, back in zip(split.train, loaded.train):
            assert np.array_equal(orig.image, back.image)
            assert np.array_equal(orig.labels, back.labels)

    def test_two_sample_fixture_shapes(self, tmp_path):
        split = synth_dataset(2, image_size=24, rng=np.random.default_rng(3),
                              n_val=1, n_test=1)
        save_dataset(split, tmp_path)
        loaded = load_dataset(tmp_path)
        for s in loaded.train:
            assert s.image.shape == (3, 24, 24)
            assert s.labels.shape == (24, 24)
            assert s.image.dtype == np.float32

    def test_empty_directory_warns(self, tmp_path):
        (tmp_path / "train").mkdir()
        with pytest.warns(UserWarning, match="empty"):
            split = load_dataset(tmp_path)
        assert split.train == [] and split.val == []

    def test_missing_label_is_error(self, tmp_path):
        split = synth_dataset(2, image_size=16, rng=np.random.default_rng(4),
                              n_val=1, n_test=1)
        save_dataset(split, tmp_path)
        (tmp_path / "train" / "labels" / "train_0001.png").unlink()
        with pytest.raises(DatasetError, match="no matching label"):
            load_dataset(tmp_path)

    def test_stray_label_is_error(self, tmp_path):
        split = synth_dataset(1, image_size=16, rng=np.random.default_rng(5),
                              n_val=1, n_test=1)
        save_dataset(split, tmp_path)
        (tmp_path / "train" / "images" / "train_0000.png").rename(
            tmp_path / "train" / "images" / "renamed.png")
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

    def test_label_out_of_declared_range(self, tmp_path):
        split = synth_dataset(1, image_size=16, n_classes=3,
                              rng=np.random.default_rng(6), n_val=1, n_test=1)
        save_dataset(split, tmp_path)
        (tmp_path / "classes.txt").write_text("a\nb\n")  # declares 2 classes
        with pytest.raises(DatasetError, match="n_classes"):
            load_dataset(tmp_path)

    def test_nonexistent_root(self, tmp_path):
        with pytest.raises(DatasetError, match="does not exist"):
            load_dataset(tmp_path / "missing")


def test_sample_validation():
    with pytest.raises(DatasetError, match=r"\(3, h, w\)"):
        LabeledSample(np.zeros((1, 4, 4)), np.zeros((4, 4), dtype=int))
    with pytest.raises(DatasetError, match="label shape"):
        LabeledSample(np.zeros((3, 4, 4)), np.zeros((4, 5), dtype=int))
