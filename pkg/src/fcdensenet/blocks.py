"""Building blocks: dense layers, dense blocks, and the two transitions.

A dense layer is BN -> ReLU -> 3x3 same convolution -> dropout and always
emits exactly ``growth_rate`` feature maps. A dense block chains ``n`` such
layers, each consuming the concatenation of the block input and all previous
layer outputs. The ``concat_input`` flag realizes the downsampling/upsampling
asymmetry: blocks on the way down return input + new maps (linear growth),
blocks on the way up return only the n*k new maps so channel counts cannot
explode at high resolution.

Convolutions inside dense layers and transitions carry no bias; the adjacent
normalizations absorb any shift. Only the stem and classifier convolutions
(see :class:`ConvLayer`) have biases.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


def _param(shape, name, fill=0.0):
    values = np.full(shape, fill, dtype=np.float32)
    return Tensor(values, requires_grad=True, name=name)


class ConvLayer:
    """Standalone convolution with bias: the input stem (3x3) and the final
    per-pixel classifier (1x1)."""

    def __init__(self, in_channels, out_channels, kernel_size):
        if kernel_size not in (1, 3):
            raise ValueError(f"kernel_size must be 1 or 3, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.weight = _param((out_channels, in_channels, kernel_size, kernel_size),
                             "weight")
        self.bias = _param((out_channels,), "bias")

    def forward(self, x):
        padding = "same" if self.kernel_size == 3 else "none"
        return ops.conv2d(x, self.weight, self.bias, padding=padding)

    def named_parameters(self, prefix=""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias

    @property
    def conv_layer_count(self):
        return 1


class DenseLayer:
    """BN -> ReLU -> 3x3 conv -> dropout, producing ``growth_rate`` maps."""

    def __init__(self, in_channels, growth_rate, dropout_p=0.2):
        self.in_channels = in_channels
        self.growth_rate = growth_rate
        self.dropout_p = dropout_p
        self.gamma = _param((in_channels,), "gamma", fill=1.0)
        self.beta = _param((in_channels,), "beta")
        self.weight = _param((growth_rate, in_channels, 3, 3), "weight")

    def forward(self, x, mode="train", rng=None):
        h = ops.batch_norm(x, self.gamma, self.beta)
        h = ops.relu(h)
        h = ops.conv2d(h, self.weight, None, padding="same")
        return ops.dropout(h, self.dropout_p, mode, rng)

    def named_parameters(self, prefix=""):
        yield prefix + "gamma", self.gamma
        yield prefix + "beta", self.beta
        yield prefix + "weight", self.weight

    @property
    def conv_layer_count(self):
        return 1


class DenseBlock:
    """Stack of dense layers with iterative channel concatenation.

    Layer i consumes in_channels + i * growth_rate channels. The block output
    concatenates the n layer outputs, preceded by the block input iff
    ``concat_input`` (downsampling path only).
    """

    def __init__(self, in_channels, n_layers, growth_rate, dropout_p=0.2,
                 concat_input=True):
        if n_layers < 1:
            raise ValueError(f"a dense block needs at least one layer, got {n_layers}")
        self.in_channels = in_channels
        self.n_layers = n_layers
        self.growth_rate = growth_rate
        self.concat_input = concat_input
        self.layers = [
            DenseLayer(in_channels + i * growth_rate, growth_rate, dropout_p)
            for i in range(n_layers)
        ]

    @property
    def out_channels(self):
        new = self.n_layers * self.growth_rate
        return self.in_channels + new if self.concat_input else new

    def forward(self, x, mode="train", rng=None):
        stack = x
        new_maps = None
        for i, layer in enumerate(self.layers):
            y = layer.forward(stack, mode, rng)
            new_maps = y if new_maps is None else ops.concat_channels(new_maps, y)
            if i + 1 < self.n_layers:
                stack = ops.concat_channels(stack, y)
        return ops.concat_channels(x, new_maps) if self.concat_input else new_maps

    def named_parameters(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}layer{i}.")

    @property
    def conv_layer_count(self):
        return self.n_layers


class TransitionDown:
    """BN -> ReLU -> 1x1 conv (channel-preserving) -> dropout -> 2x2 max pool."""

    def __init__(self, channels, dropout_p=0.2):
        self.channels = channels
        self.dropout_p = dropout_p
        self.gamma = _param((channels,), "gamma", fill=1.0)
        self.beta = _param((channels,), "beta")
        self.weight = _param((channels, channels, 1, 1), "weight")

    def forward(self, x, mode="train", rng=None):
        h = ops.batch_norm(x, self.gamma, self.beta)
        h = ops.relu(h)
        h = ops.conv2d(h, self.weight, None, padding="none")
        h = ops.dropout(h, self.dropout_p, mode, rng)
        return ops.max_pool2x2(h)

    def named_parameters(self, prefix=""):
        yield prefix + "gamma", self.gamma
        yield prefix + "beta", self.beta
        yield prefix + "weight", self.weight

    @property
    def conv_layer_count(self):
        return 1


class TransitionUp:
    """Stride-2 transposed convolution over the preceding block's new maps,
    center-cropped to the skip's spatial dims, then concatenated with it.

    The transposed kernel preserves the channel count, so the output has
    ``channels + skip_channels`` maps. Only the new feature maps of the
    previous dense block pass through here, never the full stack below it.
    """

    def __init__(self, channels):
        self.channels = channels
        self.weight = _param((channels, channels, 3, 3), "weight")

    def forward(self, block_out, skip):
        up = ops.transposed_conv2d(block_out, self.weight, stride=2)
        _, _, sh, sw = skip.values.shape
        up = ops.crop_center(up, sh, sw)
        return ops.concat_channels(up, skip)

    def named_parameters(self, prefix=""):
        yield prefix + "weight", self.weight

    @property
    def conv_layer_count(self):
        return 1
