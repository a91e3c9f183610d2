"""Declarative network construction and symbolic accounting.

:func:`channel_schedule` and :func:`parameter_count` derive per-stage feature
map totals and the exact trainable parameter count from an
:class:`ArchConfig` without building anything; :func:`build` instantiates the
executable network. A property of the construction, asserted in the test
suite, is that the realized channel widths of a built network match the
symbolic schedule stage for stage.

Stage accounting follows the published convention: ``m`` is the total number
of feature maps available at the end of a stage. In the upsampling path the
dense block output itself is only ``n * growth_rate`` wide; ``m`` counts the
block input (upsampled maps + skip) plus the new maps, and that full stack is
what the final classifier consumes at the last stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .blocks import ConvLayer, DenseBlock, TransitionDown, TransitionUp
from .exceptions import ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class ArchConfig:
    """Complete description of one fully convolutional DenseNet."""

    growth_rate: int
    down_blocks: tuple
    bottleneck_layers: int
    up_blocks: tuple
    n_classes: int
    first_conv_maps: int = 48
    dropout_p: float = 0.2
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "down_blocks", tuple(self.down_blocks))
        object.__setattr__(self, "up_blocks", tuple(self.up_blocks))
        if len(self.up_blocks) != len(self.down_blocks):
            raise ValueError(
                f"up_blocks and down_blocks must have equal length, got "
                f"{len(self.up_blocks)} vs {len(self.down_blocks)}"
            )
        counts = (*self.down_blocks, self.bottleneck_layers, *self.up_blocks)
        if any(n < 1 for n in counts):
            raise ValueError(f"all block layer counts must be >= 1, got {counts}")
        if self.growth_rate < 1 or self.first_conv_maps < 1:
            raise ValueError("growth_rate and first_conv_maps must be >= 1")
        if self.n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.n_classes}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def depth(self):
        """Number of 2x downsampling steps; inputs are padded to 2**depth."""
        return len(self.down_blocks)


PRESETS = {
    "fc-densenet56": ArchConfig(
        growth_rate=12, down_blocks=(4, 4, 4, 4, 4), bottleneck_layers=4,
        up_blocks=(4, 4, 4, 4, 4), n_classes=11,
    ),
    "fc-densenet67": ArchConfig(
        growth_rate=16, down_blocks=(5, 5, 5, 5, 5), bottleneck_layers=5,
        up_blocks=(5, 5, 5, 5, 5), n_classes=11,
    ),
    "fc-densenet103": ArchConfig(
        growth_rate=16, down_blocks=(4, 5, 7, 10, 12), bottleneck_layers=15,
        up_blocks=(12, 10, 7, 5, 4), n_classes=11,
    ),
}


def preset(name, n_classes=None):
    """Look up a preset config, optionally overriding the class count."""
    try:
        config = PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown preset {name!r}; available: {known}") from None
    if n_classes is not None and n_classes != config.n_classes:
        config = replace(config, n_classes=n_classes)
    return config


@dataclass(frozen=True)
class StageRecord:
    name: str
    m: int
    params: int


@dataclass(frozen=True)
class ArchSummary:
    m_schedule: tuple
    total_params: int
    total_conv_layers: int
    pre_softmax_maps: int
    stages: tuple = field(default=())


def _skip_channels(config):
    """Channel widths of the downsampling-path block outputs (the skips)."""
    skips = []
    m = config.first_conv_maps
    for n in config.down_blocks:
        m += n * config.growth_rate
        skips.append(m)
    return skips


def _up_inputs(config):
    """Channel width entering each upsampling dense block."""
    skips = _skip_channels(config)
    carried = config.bottleneck_layers * config.growth_rate
    inputs = []
    for i, n in enumerate(config.up_blocks):
        inputs.append(carried + skips[-(i + 1)])
        carried = n * config.growth_rate
    return inputs


def channel_schedule(config):
    """Per-stage feature-map totals, ordered stem, down path, bottleneck,
    up path. TD and TU preserve the counts they carry, so they do not add
    entries."""
    k = config.growth_rate
    schedule = [config.first_conv_maps]
    schedule.extend(_skip_channels(config))
    schedule.append(schedule[-1] + config.bottleneck_layers * k)
    for width, n in zip(_up_inputs(config), config.up_blocks):
        schedule.append(width + n * k)
    return schedule


def naive_channel_schedule(config):
    """Comparator: stage totals if the upsampling path concatenated each
    block's input with its output and upsampled the whole stack.

    Never executed; used only to demonstrate the feature-map explosion the
    non-concatenating rule avoids.
    """
    k = config.growth_rate
    schedule = [config.first_conv_maps]
    schedule.extend(_skip_channels(config))
    schedule.append(schedule[-1] + config.bottleneck_layers * k)
    skips = _skip_channels(config)
    carried = schedule[-1]
    for i, n in enumerate(config.up_blocks):
        m = carried + skips[-(i + 1)] + n * k
        schedule.append(m)
        carried = m
    return schedule


def _dense_block_param_count(in_channels, n_layers, k):
    total = 0
    for i in range(n_layers):
        c = in_channels + i * k
        total += 2 * c          # BN gamma + beta
        total += k * c * 9      # 3x3 conv, no bias
    return total


def parameter_count(config):
    """Exact trainable parameter total.

    Counts conv kernels (plus biases on the stem and classifier only), BN
    scale/shift pairs, and the transposed-conv kernels. BN keeps no running
    statistics, so nothing else exists to count.
    """
    k = config.growth_rate
    total = config.in_channels * config.first_conv_maps * 9 + config.first_conv_maps

    m = config.first_conv_maps
    for n in config.down_blocks:
        total += _dense_block_param_count(m, n, k)
        m += n * k
        total += 2 * m + m * m  # transition down: BN + 1x1 conv
    total += _dense_block_param_count(m, config.bottleneck_layers, k)

    carried = config.bottleneck_layers * k
    for width, n in zip(_up_inputs(config), config.up_blocks):
        total += 9 * carried * carried  # transition up kernel
        total += _dense_block_param_count(width, n, k)
        carried = n * k

    pre_softmax = channel_schedule(config)[-1]
    total += pre_softmax * config.n_classes + config.n_classes
    return total


def conv_layer_count(config):
    """Number of convolutional layers: stem + dense layers + one 1x1 per TD +
    one transposed conv per TU + classifier."""
    return (
        1
        + sum(config.down_blocks)
        + config.bottleneck_layers
        + sum(config.up_blocks)
        + len(config.down_blocks)
        + len(config.up_blocks)
        + 1
    )


def stage_report(config):
    """One record per stage (stable order) for the CLI architecture report."""
    k = config.growth_rate
    stages = [StageRecord(
        "input_conv",
        config.first_conv_maps,
        config.in_channels * config.first_conv_maps * 9 + config.first_conv_maps,
    )]
    m = config.first_conv_maps
    for i, n in enumerate(config.down_blocks):
        params = _dense_block_param_count(m, n, k)
        m += n * k
        params += 2 * m + m * m
        stages.append(StageRecord(f"down_{i + 1}_db{n}_td", m, params))
    stages.append(StageRecord(
        f"bottleneck_db{config.bottleneck_layers}",
        m + config.bottleneck_layers * k,
        _dense_block_param_count(m, config.bottleneck_layers, k),
    ))
    carried = config.bottleneck_layers * k
    for i, (width, n) in enumerate(zip(_up_inputs(config), config.up_blocks)):
        params = 9 * carried * carried + _dense_block_param_count(width, n, k)
        stages.append(StageRecord(f"up_{i + 1}_tu_db{n}", width + n * k, params))
        carried = n * k
    pre_softmax = stages[-1].m
    stages.append(StageRecord(
        "classifier_conv",
        config.n_classes,
        pre_softmax * config.n_classes + config.n_classes,
    ))
    return stages


def summarize(config):
    stages = tuple(stage_report(config))
    return ArchSummary(
        m_schedule=tuple(channel_schedule(config)),
        total_params=parameter_count(config),
        total_conv_layers=conv_layer_count(config),
        pre_softmax_maps=channel_schedule(config)[-1],
        stages=stages,
    )


class FCDenseNet:
    """Executable network: stem conv, dense blocks joined by transitions,
    and a 1x1 classifier over the final full-resolution stack."""

    def __init__(self, config: ArchConfig):
        self.config = config
        k = config.growth_rate
        p = config.dropout_p

        self.stem = ConvLayer(config.in_channels, config.first_conv_maps, 3)
        self.down_blocks = []
        self.transitions_down = []
        m = config.first_conv_maps
        for n in config.down_blocks:
            self.down_blocks.append(DenseBlock(m, n, k, p, concat_input=True))
            m += n * k
            self.transitions_down.append(TransitionDown(m, p))
        self.bottleneck = DenseBlock(m, config.bottleneck_layers, k, p,
                                     concat_input=False)
        self.transitions_up = []
        self.up_blocks = []
        carried = config.bottleneck_layers * k
        for width, n in zip(_up_inputs(config), config.up_blocks):
            self.transitions_up.append(TransitionUp(carried))
            self.up_blocks.append(DenseBlock(width, n, k, p, concat_input=False))
            carried = n * k
        pre_softmax = channel_schedule(config)[-1]
        self.classifier = ConvLayer(pre_softmax, config.n_classes, 1)

    def forward(self, x, mode="eval", rng=None, check_schedule=False):
        """Run the network on an (n, 3, h, w) tensor and return class logits.

        With ``check_schedule`` the realized channel width of every stage is
        asserted against :func:`channel_schedule`.
        """
        if not isinstance(x, Tensor):
            x = Tensor(x)
        schedule = channel_schedule(self.config) if check_schedule else None

        def check(stage, width):
            if schedule is not None and width != schedule[stage]:
                raise ShapeError(
                    f"stage {stage} realized {width} channels, schedule "
                    f"predicts {schedule[stage]}"
                )

        h = self.stem.forward(x)
        check(0, h.channels)
        skips = []
        for i, (block, td) in enumerate(zip(self.down_blocks, self.transitions_down)):
            h = block.forward(h, mode, rng)
            check(1 + i, h.channels)
            skips.append(h)
            h = td.forward(h, mode, rng)
        stage = 1 + len(self.down_blocks)
        new = self.bottleneck.forward(h, mode, rng)
        check(stage, h.channels + new.channels)
        for i, (tu, block) in enumerate(zip(self.transitions_up, self.up_blocks)):
            h = tu.forward(new, skips[-(i + 1)])
            new = block.forward(h, mode, rng)
            check(stage + 1 + i, h.channels + new.channels)
        pre_softmax = ops.concat_channels(h, new)
        return self.classifier.forward(pre_softmax)

    def predict_proba(self, x):
        """Eval-mode forward returning (n, c, h, w) per-pixel probabilities."""
        logits = self.forward(x, mode="eval")
        return ops.softmax_channels(logits.values)

    def named_parameters(self):
        yield from self.stem.named_parameters("stem.")
        for i, block in enumerate(self.down_blocks):
            yield from block.named_parameters(f"down{i}.")
            yield from self.transitions_down[i].named_parameters(f"td{i}.")
        yield from self.bottleneck.named_parameters("bottleneck.")
        for i, tu in enumerate(self.transitions_up):
            yield from tu.named_parameters(f"tu{i}.")
            yield from self.up_blocks[i].named_parameters(f"up{i}.")
        yield from self.classifier.named_parameters("classifier.")

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    @property
    def conv_layer_count(self):
        modules = [self.stem, *self.down_blocks, self.bottleneck,
                   *self.transitions_down, *self.transitions_up,
                   *self.up_blocks, self.classifier]
        return sum(mod.conv_layer_count for mod in modules)

    def parameter_total(self):
        return sum(p.values.size for _, p in self.named_parameters())

    def state_arrays(self):
        """Name -> copy of current values, for snapshots and checkpoints."""
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_arrays(self, state):
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in state")
            src = np.asarray(state[name], dtype=p.values.dtype)
            if src.shape != p.values.shape:
                raise ShapeError(
                    f"parameter {name!r}: stored shape {src.shape} != "
                    f"model shape {p.values.shape}"
                )
            p.values[...] = src


def init_he_uniform(network, rng):
    """He-uniform init: conv kernels ~ U(-b, b) with b = sqrt(6 / fan_in),
    fan_in = in_c * kh * kw; BN scale 1, shift 0; biases 0."""
    for name, p in network.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "weight":
            shape = p.values.shape
            fan_in = shape[1] * shape[2] * shape[3]
            if name.startswith("tu"):
                fan_in = shape[0] * shape[2] * shape[3]  # (in_c, out_c, kh, kw)
            bound = np.sqrt(6.0 / fan_in)
            p.values[...] = rng.uniform(-bound, bound, size=shape).astype(
                p.values.dtype
            )
        elif leaf == "gamma":
            p.values[...] = 1.0
        else:  # beta, bias
            p.values[...] = 0.0
    return network


def build(config, rng=None):
    """Construct and He-initialize a network from a config."""
    network = FCDenseNet(config)
    if rng is None:
        rng = np.random.default_rng(0)
    return init_he_uniform(network, rng)
