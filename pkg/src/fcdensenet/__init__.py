"""Fully convolutional DenseNets for semantic segmentation on the CPU.

The package bundles a minimal reverse-mode tensor engine, the dense-block
building blocks with their downsampling/upsampling concatenation asymmetry,
declarative architecture accounting, the RMSprop training recipe, dataset
tooling, segmentation metrics, and a CLI (``fcdensenet``) for inspection,
gradient checking, training, and evaluation.
"""

from .architecture import (
    ArchConfig,
    ArchSummary,
    FCDenseNet,
    PRESETS,
    build,
    channel_schedule,
    conv_layer_count,
    init_he_uniform,
    naive_channel_schedule,
    parameter_count,
    preset,
    stage_report,
    summarize,
)
from .data import (
    DatasetSplit,
    LabeledSample,
    VOID_LABEL,
    load_dataset,
    pad_to_multiple,
    random_crop,
    random_flip,
    save_dataset,
    synth_dataset,
)
from .estimator import FCDenseNetSegmenter
from .metrics import (
    ConfusionAccumulator,
    format_metric_report,
    metric_report_dict,
    predictions_from_probs,
)
from .optim import (
    RMSprop,
    TrainConfig,
    TrainResult,
    apply_weight_decay,
    early_stop_check,
    evaluate,
    lr_at_epoch,
    train,
)
from .tensor import Graph, Tensor

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "ArchSummary",
    "ConfusionAccumulator",
    "DatasetSplit",
    "FCDenseNet",
    "FCDenseNetSegmenter",
    "Graph",
    "LabeledSample",
    "PRESETS",
    "RMSprop",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "VOID_LABEL",
    "apply_weight_decay",
    "build",
    "channel_schedule",
    "conv_layer_count",
    "early_stop_check",
    "evaluate",
    "format_metric_report",
    "init_he_uniform",
    "load_dataset",
    "lr_at_epoch",
    "metric_report_dict",
    "naive_channel_schedule",
    "pad_to_multiple",
    "parameter_count",
    "predictions_from_probs",
    "preset",
    "random_crop",
    "random_flip",
    "save_dataset",
    "stage_report",
    "summarize",
    "synth_dataset",
    "train",
]
