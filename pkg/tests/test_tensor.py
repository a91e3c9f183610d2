import numpy as np
import pytest

from fcdensenet import ops
from fcdensenet.exceptions import ShapeError
from fcdensenet.tensor import Graph, Tensor


def test_tensor_basics():
    t = Tensor(np.zeros((2, 3, 4, 5), dtype=np.float32), requires_grad=True)
    assert t.shape == (2, 3, 4, 5)
    assert t.channels == 3
    assert t.grad is None
    assert t.dtype == np.float32


def test_integer_input_coerced_to_float():
    t = Tensor(np.arange(4).reshape(1, 1, 2, 2))
    assert np.issubdtype(t.dtype, np.floating)


def test_sum_backward_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4, 4)),
               requires_grad=True)
    with Graph() as g:
        loss = ops.sum_all(x)
    g.backward(loss)
    assert x.grad.shape == x.shape
    assert np.array_equal(x.grad, np.ones_like(x.values))


def test_fanout_gradients_sum():
    # a tensor consumed by two branches receives both contributions
    x = Tensor(np.random.default_rng(1).normal(size=(1, 2, 3, 3)),
               requires_grad=True)
    with Graph() as g:
        loss = ops.sum_all(ops.concat_channels(x, x))
    g.backward(loss)
    assert np.array_equal(x.grad, 2.0 * np.ones_like(x.values))


def test_repeated_backward_accumulates():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with Graph() as g:
        loss = ops.sum_all(x)
    g.backward(loss)
    g.backward(loss)
    assert np.array_equal(x.grad, 2.0 * np.ones_like(x.values))
    x.zero_grad()
    g.backward(loss)
    assert np.array_equal(x.grad, np.ones_like(x.values))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with Graph() as g:
        y = ops.relu(x)
    with pytest.raises(ShapeError):
        g.backward(y)


def test_untracked_inputs_receive_no_grad():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=False)
    w = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
    with Graph() as g:
        loss = ops.sum_all(ops.conv2d(x, w, None, padding="none"))
    g.backward(loss)
    assert x.grad is None
    assert w.grad is not None


def test_no_recording_outside_graph():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    y = ops.relu(x)  # no active tape
    assert y.requires_grad
    g = Graph()
    assert g.nodes == []


def test_intermediate_tensors_tracked():
    x = Tensor(np.random.default_rng(2).normal(size=(1, 2, 4, 4)),
               requires_grad=True)
    with Graph() as g:
        mid = ops.relu(x)
        loss = ops.sum_all(mid)
    g.backward(loss)
    assert mid.requires_grad
    assert mid.grad is not None and mid.grad.shape == mid.shape


def test_grad_matches_values_shape_invariant():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 4, 6, 6)), requires_grad=True)
    gamma = Tensor(np.ones(4), requires_grad=True)
    beta = Tensor(np.zeros(4), requires_grad=True)
    with Graph() as g:
        loss = ops.sum_all(ops.batch_norm(x, gamma, beta))
    g.backward(loss)
    for t in (x, gamma, beta):
        assert t.grad.shape == t.values.shape
