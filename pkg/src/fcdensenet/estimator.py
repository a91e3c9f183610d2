"""Scikit-learn style estimator facade.

:class:`FCDenseNetSegmenter` wraps architecture construction, the two-phase
training recipe, and padded inference behind the familiar
``fit`` / ``predict`` / ``score`` surface, so the model drops into sklearn
pipelines, grid search, and ``clone``. ``X`` is a batch of RGB images,
``y`` a batch of per-pixel class maps with an optional void label.

>>> seg = FCDenseNetSegmenter(down_blocks=(2, 2), bottleneck_layers=2,
...                           up_blocks=(2, 2), growth_rate=8, crop_size=48,
...                           max_epochs=50)
>>> seg.fit(images, label_maps).predict(images).shape == label_maps.shape
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import validation
from .architecture import ArchConfig, build, preset as preset_config
from .data import DatasetSplit, LabeledSample, pad_to_multiple, crop_prediction
from .metrics import ConfusionAccumulator, predictions_from_probs
from .optim import TrainConfig, train


class FCDenseNetSegmenter(BaseEstimator):
    """Pixel-wise semantic segmentation with a fully convolutional DenseNet.

    Parameters mirror :class:`ArchConfig` and :class:`TrainConfig`; passing
    ``preset`` ("fc-densenet56" / "fc-densenet67" / "fc-densenet103")
    overrides the architecture fields. The class count is inferred from the
    labels seen in ``fit``.
    """

    def __init__(self, preset=None, growth_rate=16,
                 down_blocks=(4, 5, 7, 10, 12), bottleneck_layers=15,
                 up_blocks=(12, 10, 7, 5, 4), first_conv_maps=48,
                 dropout_p=0.2, lr_init=1e-3, lr_decay_per_epoch=0.995,
                 finetune_lr=1e-4, weight_decay=1e-4, patience=100,
                 finetune_patience=50, batch_size=3, crop_size=224,
                 monitor="mean_iou", max_epochs=750, finetune_max_epochs=750,
                 finetune=True, stop_on_monitor=None, val_fraction=0.15,
                 flip_axis="horizontal", void_label=255, seed=0):
        self.preset = preset
        self.growth_rate = growth_rate
        self.down_blocks = down_blocks
        self.bottleneck_layers = bottleneck_layers
        self.up_blocks = up_blocks
        self.first_conv_maps = first_conv_maps
        self.dropout_p = dropout_p
        self.lr_init = lr_init
        self.lr_decay_per_epoch = lr_decay_per_epoch
        self.finetune_lr = finetune_lr
        self.weight_decay = weight_decay
        self.patience = patience
        self.finetune_patience = finetune_patience
        self.batch_size = batch_size
        self.crop_size = crop_size
        self.monitor = monitor
        self.max_epochs = max_epochs
        self.finetune_max_epochs = finetune_max_epochs
        self.finetune = finetune
        self.stop_on_monitor = stop_on_monitor
        self.val_fraction = val_fraction
        self.flip_axis = flip_axis
        self.void_label = void_label
        self.seed = seed

    def _arch_config(self, n_classes):
        if self.preset is not None:
            return preset_config(self.preset, n_classes=n_classes)
        return ArchConfig(
            growth_rate=self.growth_rate,
            down_blocks=tuple(self.down_blocks),
            bottleneck_layers=self.bottleneck_layers,
            up_blocks=tuple(self.up_blocks),
            n_classes=n_classes,
            first_conv_maps=self.first_conv_maps,
            dropout_p=self.dropout_p,
        )

    def _train_config(self):
        return TrainConfig(
            lr_init=self.lr_init,
            lr_decay_per_epoch=self.lr_decay_per_epoch,
            finetune_lr=self.finetune_lr,
            weight_decay=self.weight_decay,
            patience=self.patience,
            finetune_patience=self.finetune_patience,
            batch_size=self.batch_size,
            crop_size=self.crop_size,
            monitor=self.monitor,
            max_epochs=self.max_epochs,
            finetune_max_epochs=self.finetune_max_epochs,
            seed=self.seed,
            flip_axis=self.flip_axis,
            finetune=self.finetune,
            stop_on_monitor=self.stop_on_monitor,
        )

    def fit(self, X, y):
        """Train on images ``X`` and per-pixel labels ``y``.

        A ``val_fraction`` share of the samples (at least one) is held out
        for the early-stopping monitor.
        """
        X = validation.check_image_batch(X)
        y = validation.check_label_batch(y, X, self.void_label)
        n_classes = validation.infer_n_classes(y, self.void_label)
        if n_classes < 2:
            raise ValueError("fit needs at least two classes in y")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(
                f"val_fraction must be in (0, 1), got {self.val_fraction}"
            )

        samples = [
            LabeledSample(X[i], y[i], self.void_label, name=f"sample_{i:05d}")
            for i in range(X.shape[0])
        ]
        if len(samples) < 2:
            raise ValueError("fit needs at least two samples (train + val)")
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(samples))
        n_val = max(1, int(round(self.val_fraction * len(samples))))
        n_val = min(n_val, len(samples) - 1)
        val = [samples[i] for i in order[:n_val]]
        tr = [samples[i] for i in order[n_val:]]
        split = DatasetSplit(train=tr, val=val, test=[], n_classes=n_classes,
                             void_label=self.void_label)

        arch = self._arch_config(n_classes)
        network = build(arch, np.random.default_rng(self.seed))
        result = train(network, split, self._train_config())

        self.network_ = result.network
        self.arch_config_ = arch
        self.n_classes_ = n_classes
        self.classes_ = np.arange(n_classes)
        self.history_ = result.epochs
        self.best_score_ = result.best_metric
        self.best_epoch_ = result.best_epoch
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise RuntimeError("this FCDenseNetSegmenter is not fitted yet")

    def predict_proba(self, X):
        """Per-pixel class probabilities, shape (n, n_classes, h, w)."""
        self._check_fitted()
        X = validation.check_image_batch(X)
        multiple = 2 ** self.arch_config_.depth
        out = []
        for i in range(X.shape[0]):
            sample = LabeledSample(
                X[i], np.zeros(X.shape[2:], dtype=np.int64), self.void_label
            )
            padded, original = pad_to_multiple(sample, multiple)
            probs = self.network_.predict_proba(padded.image[None])[0]
            out.append(crop_prediction(probs, original))
        return np.stack(out)

    def predict(self, X):
        """Per-pixel class maps, shape (n, h, w)."""
        return predictions_from_probs(self.predict_proba(X))

    def score(self, X, y):
        """Dataset-level mean IoU of predictions against ``y`` (void excluded)."""
        self._check_fitted()
        X = validation.check_image_batch(X)
        y = validation.check_label_batch(y, X, self.void_label)
        acc = ConfusionAccumulator(self.n_classes_)
        acc.accumulate(self.predict(X), y, self.void_label)
        return acc.mean_iou()
