import numpy as np
import pytest

from fcdensenet import ops
from fcdensenet.exceptions import ShapeError
from fcdensenet.tensor import Graph, Tensor


class TestRelu:
    def test_values(self):
        x = Tensor(np.array([[[[-1.0, 0.0, 2.0]]]]).reshape(1, 1, 1, 3))
        assert np.array_equal(ops.relu(x).values.ravel(), [0.0, 0.0, 2.0])

    def test_grad_zero_at_nonpositive(self):
        x = Tensor(np.array([-2.0, 0.0, 3.0]).reshape(1, 1, 1, 3),
                   requires_grad=True)
        with Graph() as g:
            loss = ops.sum_all(ops.relu(x))
        g.backward(loss)
        assert np.array_equal(x.grad.ravel(), [0.0, 0.0, 1.0])


class TestDropout:
    def test_p_zero_is_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 3, 3)))
        out = ops.dropout(x, 0.0, "train", np.random.default_rng(1))
        assert out is x

    def test_eval_is_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 3, 3)))
        assert ops.dropout(x, 0.5, "eval") is x

    def test_inverted_scaling(self):
        x = Tensor(np.ones((1, 1, 50, 50)))
        out = ops.dropout(x, 0.2, "train", np.random.default_rng(2))
        survivors = out.values[out.values != 0.0]
        assert np.allclose(survivors, 1.0 / 0.8)
        drop_frac = (out.values == 0.0).mean()
        assert 0.1 < drop_frac < 0.3

    def test_deterministic_given_seed(self):
        x = Tensor(np.random.default_rng(3).normal(size=(2, 3, 8, 8)))
        a = ops.dropout(x, 0.4, "train", np.random.default_rng(7)).values
        b = ops.dropout(x, 0.4, "train", np.random.default_rng(7)).values
        assert np.array_equal(a, b)

    def test_requires_rng_in_train(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        with pytest.raises(ValueError, match="rng"):
            ops.dropout(x, 0.5, "train")
        with pytest.raises(ValueError, match="mode"):
            ops.dropout(x, 0.5, "test", np.random.default_rng(0))
        with pytest.raises(ValueError, match="probability"):
            ops.dropout(x, 1.0, "train", np.random.default_rng(0))


class TestConcatSlice:
    def test_concat_channel_arithmetic_and_slicing(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(2, 3, 4, 5))
        b = rng.normal(size=(2, 5, 4, 5))
        out = ops.concat_channels(Tensor(a), Tensor(b))
        assert out.shape == (2, 8, 4, 5)
        assert np.array_equal(out.values[:, :3], a)
        assert np.array_equal(out.values[:, 3:], b)
        assert np.array_equal(
            ops.slice_channels(out, 0, 3).values, a)
        assert np.array_equal(
            ops.slice_channels(out, 3, 8).values, b)

    def test_concat_spatial_mismatch(self):
        a = Tensor(np.zeros((1, 2, 4, 4)))
        b = Tensor(np.zeros((1, 2, 4, 5)))
        with pytest.raises(ShapeError, match="matching"):
            ops.concat_channels(a, b)

    def test_concat_backward_splits_gradients_exactly(self):
        rng = np.random.default_rng(5)
        a = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 3, 3, 3)), requires_grad=True)
        weights = rng.normal(size=(1, 5, 3, 3))
        with Graph() as g:
            loss = ops.weighted_sum(ops.concat_channels(a, b), weights)
        g.backward(loss)
        assert np.array_equal(a.grad, weights[:, :2])
        assert np.array_equal(b.grad, weights[:, 2:])

    def test_crop_center(self):
        x = Tensor(np.arange(36, dtype=np.float64).reshape(1, 1, 6, 6))
        out = ops.crop_center(x, 4, 4)
        assert np.array_equal(out.values[0, 0], x.values[0, 0, 1:5, 1:5])
        with pytest.raises(ShapeError, match="crop"):
            ops.crop_center(x, 8, 4)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_loss_is_log_c(self):
        for c in (2, 5, 11):
            logits = Tensor(np.zeros((1, c, 2, 2), dtype=np.float64))
            targets = np.zeros((1, 2, 2), dtype=np.int64)
            loss, probs = ops.softmax_cross_entropy(logits, targets)
            assert abs(float(loss.values) - np.log(c)) < 1e-12
            assert np.allclose(probs, 1.0 / c)

    def test_confident_logit_gives_tiny_loss(self):
        logits = np.zeros((1, 3, 1, 1), dtype=np.float64)
        logits[0, 1, 0, 0] = 1e4
        targets = np.full((1, 1, 1), 1, dtype=np.int64)
        loss, _ = ops.softmax_cross_entropy(Tensor(logits), targets)
        assert float(loss.values) < 1e-6

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(6)
        logits = Tensor(rng.normal(scale=5.0, size=(2, 7, 4, 4)))
        targets = rng.integers(0, 7, size=(2, 4, 4))
        _, probs = ops.softmax_cross_entropy(Tensor(logits.values), targets)
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6
        assert probs.min() >= 0.0 and probs.max() <= 1.0

    def test_void_pixels_contribute_nothing(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(1, 4, 3, 3))
        targets = rng.integers(0, 4, size=(1, 3, 3))
        full_loss, _ = ops.softmax_cross_entropy(Tensor(logits), targets)

        voided = targets.copy()
        voided[0, 0, 0] = 255
        lt = Tensor(logits, requires_grad=True)
        with Graph() as g:
            loss, _ = ops.softmax_cross_entropy(lt, voided, void_label=255)
        g.backward(loss)
        # gradient at the void pixel is exactly zero
        assert np.all(lt.grad[0, :, 0, 0] == 0.0)
        # loss equals the mean over the remaining pixels
        keep = [(i, j) for i in range(3) for j in range(3) if (i, j) != (0, 0)]
        per_pixel = []
        for i, j in keep:
            z = logits[0, :, i, j]
            p = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
            per_pixel.append(-np.log(p[targets[0, i, j]]))
        assert abs(float(loss.values) - np.mean(per_pixel)) < 1e-6

    def test_all_void_gives_zero_loss_and_grad(self):
        logits = Tensor(np.random.default_rng(8).normal(size=(1, 3, 2, 2)),
                        requires_grad=True)
        targets = np.full((1, 2, 2), 9, dtype=np.int64)
        with Graph() as g:
            loss, _ = ops.softmax_cross_entropy(logits, targets, void_label=9)
        g.backward(loss)
        assert float(loss.values) == 0.0
        assert np.all(logits.grad == 0.0)

    def test_invalid_target_rejected(self):
        logits = Tensor(np.zeros((1, 3, 2, 2)))
        targets = np.array([[[0, 1], [3, 2]]], dtype=np.int64)
        with pytest.raises(ShapeError, match="target class 3"):
            ops.softmax_cross_entropy(logits, targets)
        # but 3 is fine when it is the void label
        ops.softmax_cross_entropy(logits, targets, void_label=3)
        with pytest.raises(TypeError):
            ops.softmax_cross_entropy(logits, targets.astype(np.float32))
