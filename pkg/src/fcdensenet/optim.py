"""RMSprop training with the two-phase schedule.

Phase 1 trains on random crops with flips at lr 1e-3 decayed by 0.995 each
epoch, early-stopped on a validation metric with patience 100. Phase 2
finetunes on full-size (padded) images at a constant 1e-4 with patience 50,
starting from the phase-1 best weights and fresh optimizer accumulators.
Weight decay acts as an additive L2 gradient on convolution kernels only;
decaying BN scale/shift would fight the normalization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import data as data_mod
from .exceptions import NonFiniteGradientError
from .metrics import ConfusionAccumulator, predictions_from_probs
from .ops import softmax_cross_entropy
from .tensor import Graph, Tensor


@dataclass
class TrainConfig:
    lr_init: float = 1e-3
    lr_decay_per_epoch: float = 0.995
    finetune_lr: float = 1e-4
    weight_decay: float = 1e-4
    patience: int = 100
    finetune_patience: int = 50
    batch_size: int = 3
    crop_size: int = 224
    monitor: str = "mean_iou"  # or "mean_accuracy"
    rms_rho: float = 0.9
    rms_eps: float = 1e-8
    max_epochs: int = 750
    finetune_max_epochs: int = 750
    seed: int = 0
    flip_axis: str = "horizontal"
    finetune: bool = True
    # optional convergence target: stop as soon as the monitored validation
    # metric reaches this value (the schedule itself is unchanged)
    stop_on_monitor: Optional[float] = None

    def __post_init__(self):
        if self.lr_init <= 0 or self.finetune_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ValueError(
                f"lr decay must be in (0, 1], got {self.lr_decay_per_epoch}"
            )
        if self.patience < 1 or self.finetune_patience < 1:
            raise ValueError("patience must be >= 1")
        if self.monitor not in ("mean_iou", "mean_accuracy"):
            raise ValueError(
                f"monitor must be 'mean_iou' or 'mean_accuracy', got "
                f"{self.monitor!r}"
            )
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


class RMSprop:
    """Keeps one running mean of squared gradients per parameter.

    step() expects gradients already in ``param.grad`` (weight decay
    included) and applies p -= lr * g / (sqrt(s) + eps).
    """

    def __init__(self, named_params, lr, rho=0.9, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.square_avg = {
            name: np.zeros_like(p.values) for name, p in self.named_params
        }

    def reset_state(self):
        for s in self.square_avg.values():
            s[...] = 0.0

    def step(self):
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NonFiniteGradientError(name, float(np.abs(g).max(initial=0.0)))
            s = self.square_avg[name]
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            p.values -= self.lr * g / (np.sqrt(s) + self.eps)


def is_weight_decayed(name):
    """Weight decay applies to convolution kernels only."""
    return name.rsplit(".", 1)[-1] == "weight"


def apply_weight_decay(named_params, weight_decay):
    """Add wd * p to the gradient of every conv kernel (in place)."""
    if weight_decay == 0:
        return
    for name, p in named_params:
        if p.grad is not None and is_weight_decayed(name):
            p.grad += weight_decay * p.values


def lr_at_epoch(config, epoch):
    """Phase-1 learning rate lr_init * decay**epoch, computed directly from
    the epoch index so it is exact to machine precision."""
    return config.lr_init * config.lr_decay_per_epoch ** epoch


def early_stop_check(history, patience):
    """Return the best epoch index if the monitored metric has not strictly
    improved for ``patience`` consecutive epochs, else None.

    Ties do not count as improvement and do not reset the counter.
    """
    if not history:
        return None
    best = 0
    for i in range(1, len(history)):
        if history[i] > history[best]:
            best = i
    if len(history) - 1 - best >= patience:
        return best
    return None


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_miou: float
    val_gacc: float
    phase: int = 1


@dataclass
class TrainResult:
    network: object
    epochs: list
    best_metric: float
    best_epoch: int
    stopped_early: bool = False
    phase1_epochs: int = 0

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "lr", "train_loss", "val_miou", "val_gacc"])
            for rec in self.epochs:
                writer.writerow([
                    rec.epoch, repr(rec.lr), repr(rec.train_loss),
                    repr(rec.val_miou), repr(rec.val_gacc),
                ])


def evaluate(network, samples, n_classes, void_label):
    """Dataset-level mean IoU and global accuracy, one image per batch.

    Images are padded to the network's downsampling multiple and predictions
    cropped back before counting, so padding never touches the metrics.
    """
    acc = ConfusionAccumulator(n_classes)
    multiple = 2 ** network.config.depth
    for sample in samples:
        padded, original = data_mod.pad_to_multiple(sample, multiple)
        probs = network.predict_proba(padded.image[None])
        pred = data_mod.crop_prediction(predictions_from_probs(probs)[0], original)
        acc.accumulate(pred, sample.labels, void_label)
    return acc.mean_iou(), acc.global_accuracy(), acc


def _assemble_batch(samples, indices, config, aug_rng, full_size, multiple):
    images, labels = [], []
    for i in indices:
        s = samples[i]
        if full_size:
            s, _ = data_mod.pad_to_multiple(s, multiple)
        else:
            s = data_mod.random_crop(s, config.crop_size, aug_rng)
        s = data_mod.random_flip(s, aug_rng, axis=config.flip_axis)
        images.append(s.image)
        labels.append(s.labels)
    return np.stack(images), np.stack(labels)


def train(network, dataset, config, progress=None):
    """Run the two-phase recipe and return the best-validation network.

    ``dataset`` is a DatasetSplit with nonempty train and val lists. The
    per-epoch log records (epoch, lr, train loss, val mean IoU, val global
    accuracy). All randomness (shuffling, augmentation, dropout) derives
    from ``config.seed``.
    """
    if not dataset.train or not dataset.val:
        raise ValueError("training requires nonempty train and val splits")
    multiple = 2 ** network.config.depth
    if config.crop_size % multiple != 0:
        raise ValueError(
            f"crop_size {config.crop_size} must be a multiple of {multiple} "
            f"(2**depth for this architecture)"
        )
    n_classes = network.config.n_classes
    void = dataset.void_label
    params = list(network.named_parameters())

    root = np.random.default_rng(config.seed)
    shuffle_rng, aug_rng, drop_rng = root.spawn(3)

    optimizer = RMSprop(params, config.lr_init, config.rms_rho, config.rms_eps)
    records = []
    best_metric = -np.inf
    best_epoch = -1
    best_state = None
    target_hit = False
    global_epoch = 0

    def run_phase(phase, lr_for, patience, max_epochs, full_size):
        nonlocal best_metric, best_epoch, best_state, target_hit, global_epoch
        history = []
        for epoch in range(max_epochs):
            lr = lr_for(epoch)
            optimizer.lr = lr
            order = shuffle_rng.permutation(len(dataset.train))
            losses = []
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                x, t = _assemble_batch(dataset.train, batch, config, aug_rng,
                                       full_size, multiple)
                network.zero_grad()
                with Graph() as tape:
                    logits = network.forward(Tensor(x), mode="train", rng=drop_rng)
                    loss, _ = softmax_cross_entropy(logits, t, void)
                tape.backward(loss)
                apply_weight_decay(params, config.weight_decay)
                try:
                    optimizer.step()
                except NonFiniteGradientError as err:
                    raise NonFiniteGradientError(
                        f"{err.param_name} (phase {phase}, epoch {epoch}, "
                        f"batch at index {start})", err.max_abs
                    ) from None
                losses.append(float(loss.values))
            train_loss = float(np.mean(losses))
            val_miou, val_gacc, _ = evaluate(network, dataset.val, n_classes, void)
            monitored = val_miou if config.monitor == "mean_iou" else val_gacc
            records.append(EpochRecord(global_epoch, lr, train_loss,
                                       val_miou, val_gacc, phase))
            if progress is not None:
                progress(records[-1])
            history.append(monitored)
            if monitored > best_metric:
                best_metric = monitored
                best_epoch = global_epoch
                best_state = network.state_arrays()
            global_epoch += 1
            if config.stop_on_monitor is not None \
                    and monitored >= config.stop_on_monitor:
                target_hit = True
                return
            if early_stop_check(history, patience) is not None:
                return

    run_phase(1, lambda e: lr_at_epoch(config, e), config.patience,
              config.max_epochs, full_size=False)
    phase1_epochs = global_epoch
    if best_state is not None:
        network.load_state_arrays(best_state)

    if config.finetune and not target_hit:
        optimizer.reset_state()  # accumulators restart at the phase boundary
        run_phase(2, lambda e: config.finetune_lr, config.finetune_patience,
                  config.finetune_max_epochs, full_size=True)
        if best_state is not None:
            network.load_state_arrays(best_state)

    return TrainResult(
        network=network,
        epochs=records,
        best_metric=float(best_metric),
        best_epoch=best_epoch,
        stopped_early=target_hit,
        phase1_epochs=phase1_epochs,
    )
