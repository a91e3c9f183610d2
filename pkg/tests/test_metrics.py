import numpy as np
import pytest

from fcdensenet.exceptions import ShapeError, UndefinedMetricError
from fcdensenet.metrics import (
    ConfusionAccumulator, format_metric_report, metric_report_dict,
    predictions_from_probs,
)

from oracles import confusion_naive, iou_naive


def test_perfect_prediction():
    rng = np.random.default_rng(0)
    targets = rng.integers(0, 4, size=(2, 8, 8))
    acc = ConfusionAccumulator(4).accumulate(targets, targets)
    assert acc.global_accuracy() == 1.0
    for c in range(4):
        assert acc.iou(c) == 1.0
    assert acc.mean_iou() == 1.0
    assert np.array_equal(np.diag(acc.matrix) > 0, np.ones(4, dtype=bool))


def test_disjoint_supports_give_zero_iou():
    targets = np.zeros((4, 4), dtype=np.int64)
    preds = np.ones((4, 4), dtype=np.int64)
    acc = ConfusionAccumulator(2).accumulate(preds, targets)
    assert acc.iou(0) == 0.0
    assert acc.iou(1) == 0.0
    assert acc.global_accuracy() == 0.0


def test_two_by_two_hand_count():
    targets = np.array([[0, 0], [1, 1]])
    preds = np.array([[0, 1], [1, 1]])
    acc = ConfusionAccumulator(2).accumulate(preds, targets)
    assert acc.iou(0) == 1 / 2
    assert acc.iou(1) == 2 / 3
    assert acc.global_accuracy() == 3 / 4
    assert acc.mean_iou() == (1 / 2 + 2 / 3) / 2


def test_all_void_leaves_accumulator_unchanged():
    acc = ConfusionAccumulator(3)
    targets = np.full((5, 5), 255, dtype=np.int64)
    preds = np.random.default_rng(1).integers(0, 3, size=(5, 5))
    acc.accumulate(preds, targets, void_label=255)
    assert acc.total == 0
    assert np.all(acc.matrix == 0)


@pytest.mark.parametrize("seed", range(100))
def test_random_cases_match_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    n_classes = int(rng.integers(2, 6))
    targets = rng.integers(0, n_classes, size=(8, 8))
    targets[rng.random(size=(8, 8)) < 0.1] = 255
    preds = rng.integers(0, n_classes, size=(8, 8))
    acc = ConfusionAccumulator(n_classes).accumulate(preds, targets,
                                                     void_label=255)
    expected = confusion_naive(preds, targets, n_classes, void_label=255)
    assert np.array_equal(acc.matrix, expected)
    for c in range(n_classes):
        oracle = iou_naive(expected, c)
        if oracle is None:
            with pytest.raises(UndefinedMetricError):
                acc.iou(c)
        else:
            assert acc.iou(c) == oracle


def test_accumulate_distributes_and_merge_is_sum():
    rng = np.random.default_rng(7)
    targets = rng.integers(0, 3, size=(10, 10))
    preds = rng.integers(0, 3, size=(10, 10))
    whole = ConfusionAccumulator(3).accumulate(preds, targets)
    top = ConfusionAccumulator(3).accumulate(preds[:5], targets[:5])
    bottom = ConfusionAccumulator(3).accumulate(preds[5:], targets[5:])
    top.merge(bottom)
    assert np.array_equal(whole.matrix, top.matrix)


def test_label_permutation_invariance():
    rng = np.random.default_rng(8)
    targets = rng.integers(0, 4, size=(12, 12))
    preds = rng.integers(0, 4, size=(12, 12))
    acc = ConfusionAccumulator(4).accumulate(preds, targets)
    perm = np.array([2, 0, 3, 1])
    acc_p = ConfusionAccumulator(4).accumulate(perm[preds], perm[targets])
    for c in range(4):
        assert acc.iou(c) == acc_p.iou(perm[c])
    assert acc.mean_iou() == pytest.approx(acc_p.mean_iou(), abs=1e-12)
    assert acc.global_accuracy() == acc_p.global_accuracy()


def test_adding_correct_pixel_never_decreases_iou():
    rng = np.random.default_rng(9)
    for _ in range(20):
        targets = rng.integers(0, 3, size=(6, 6))
        preds = rng.integers(0, 3, size=(6, 6))
        acc = ConfusionAccumulator(3).accumulate(preds, targets)
        before = acc.iou(1) if acc.matrix[1].sum() + acc.matrix[:, 1].sum() else 0.0
        acc.accumulate(np.array([[1]]), np.array([[1]]))
        assert acc.iou(1) >= before


def test_empty_accumulator_raises_not_nan():
    acc = ConfusionAccumulator(3)
    with pytest.raises(UndefinedMetricError):
        acc.mean_iou()
    with pytest.raises(UndefinedMetricError):
        acc.global_accuracy()


def test_absent_class_excluded_from_mean():
    targets = np.zeros((4, 4), dtype=np.int64)
    preds = np.zeros((4, 4), dtype=np.int64)
    acc = ConfusionAccumulator(3).accumulate(preds, targets)
    assert acc.per_class_iou() == [1.0, None, None]
    assert acc.mean_iou() == 1.0


def test_dataset_level_iou_differs_from_per_image_mean():
    # the accumulator pools pixels over the whole dataset, which is not the
    # mean of per-image IoUs; this fixture separates the two
    t1 = np.array([[1, 1], [1, 1]])
    p1 = np.array([[1, 1], [1, 0]])     # image 1: IoU(1) = 3/4
    t2 = np.array([[1, 0], [0, 0]])
    p2 = np.array([[0, 0], [0, 0]])     # image 2: IoU(1) = 0
    pooled = ConfusionAccumulator(2)
    pooled.accumulate(p1, t1)
    pooled.accumulate(p2, t2)
    assert pooled.iou(1) == 3 / 5       # pooled: inter 3, union 4 + 1
    per_image_mean = (3 / 4 + 0.0) / 2
    assert pooled.iou(1) != per_image_mean


def test_argmax_tie_breaks_to_lowest_index():
    probs = np.full((1, 3, 2, 2), 1 / 3)
    assert np.all(predictions_from_probs(probs) == 0)


def test_shape_mismatch_rejected():
    acc = ConfusionAccumulator(2)
    with pytest.raises(ShapeError):
        acc.accumulate(np.zeros((2, 2), dtype=int), np.zeros((3, 2), dtype=int))
    with pytest.raises(ShapeError, match="outside"):
        acc.accumulate(np.full((2, 2), 5), np.zeros((2, 2), dtype=int))


def test_report_formats():
    targets = np.array([[0, 0], [1, 1]])
    preds = np.array([[0, 1], [1, 1]])
    acc = ConfusionAccumulator(2).accumulate(preds, targets)
    text = format_metric_report(acc, ["sky", "road"])
    assert "sky" in text and "Mean IoU" in text and "Global accuracy" in text
    payload = metric_report_dict(acc, ["sky", "road"])
    assert payload["per_class_iou"]["road"] == 2 / 3
    assert payload["pixels"] == 4
