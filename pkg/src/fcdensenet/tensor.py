"""Dense tensors and the recorded-tape reverse-mode gradient engine.

A :class:`Tensor` wraps a numpy array (4-d ``(batch, channels, rows, cols)``
for feature maps; vectors for per-channel parameters; 0-d for losses).
Operations executed inside a ``with Graph():`` block append one node per op
to the tape, in execution order. ``Graph.backward(loss)`` replays the tape in
exact reverse order, accumulating gradients additively so a tensor consumed
by several ops receives the sum of all contributions.

Training and inference run in float32; gradient checking builds float64
tensors and every kernel follows the input dtype.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError


class Tensor:
    """Array value plus an optional gradient accumulator.

    ``requires_grad`` marks the tensor as tracked: backward passes will leave
    ``d loss / d self`` in ``self.grad``. Outputs of ops are tracked whenever
    any of their inputs is.
    """

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad=False, name=None):
        values = np.asarray(values)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float32)
        self.values = values
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def channels(self):
        if self.values.ndim != 4:
            raise ShapeError(f"channels undefined for ndim={self.values.ndim} tensor")
        return self.values.shape[1]

    def zero_grad(self):
        self.grad = None

    def astype(self, dtype):
        """Copy of this tensor in another float dtype (used by gradient checks)."""
        return Tensor(self.values.astype(dtype), requires_grad=self.requires_grad,
                      name=self.name)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype}{flag}{label})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    """One recorded operation: op kind, input/output tensors, and a closure
    that maps the output gradient to per-input gradient contributions."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn

    def __repr__(self):
        return f"Node({self.op})"


class Graph:
    """Tape of recorded nodes; context manager that activates recording.

    Nodes are stored in execution order. Backward visits them strictly in
    reverse, which is a valid topological order because every op's inputs
    were necessarily recorded before the op itself.
    """

    _stack: list["Graph"] = []

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        Graph._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Graph._stack.pop()
        return False

    @classmethod
    def current(cls):
        return cls._stack[-1] if cls._stack else None

    def record(self, op, inputs, output, backward_fn):
        self.nodes.append(Node(op, inputs, output, backward_fn))

    def backward(self, loss):
        """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor.

        ``loss`` must be a 0-d tensor produced on this tape. Repeated calls
        without zeroing the grads add up, and fan-out within one pass sums as
        required by linearity.
        """
        if not isinstance(loss, Tensor):
            raise TypeError("backward expects a Tensor loss")
        if loss.values.ndim != 0:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {loss.values.shape}"
            )
        flow: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
        touched: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            g = flow.get(id(node.output))
            if g is None:
                continue  # not on any path to the loss
            for tensor, contrib in node.backward_fn(g):
                if not tensor.requires_grad:
                    continue
                key = id(tensor)
                held = flow.get(key)
                # out-of-place add: contributions may be views into other grads
                flow[key] = contrib if held is None else held + contrib
                touched[key] = tensor
        for key, tensor in touched.items():
            entry = flow[key]
            if entry.base is not None:
                entry = entry.copy()
            if not tensor.requires_grad:
                continue
            tensor.grad = entry if tensor.grad is None else tensor.grad + entry
