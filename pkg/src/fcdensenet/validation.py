"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError


def check_image_batch(X):
    """Coerce to an (n, 3, h, w) float32 batch in [0, 1].

    Accepts channels-first (n, 3, h, w) or channels-last (n, h, w, 3)
    arrays; uint8 input is scaled by 1/255. When both layouts are possible
    (h == w == 3) channels-first wins.
    """
    X = np.asarray(X)
    if X.ndim != 4:
        raise ShapeError(
            f"expected a 4-d image batch (n, 3, h, w) or (n, h, w, 3), got "
            f"shape {X.shape}"
        )
    if X.shape[1] == 3:
        batch = X
    elif X.shape[3] == 3:
        batch = X.transpose(0, 3, 1, 2)
    else:
        raise ShapeError(
            f"no 3-channel axis found in image batch of shape {X.shape}"
        )
    if batch.dtype == np.uint8:
        batch = batch.astype(np.float32) / 255.0
    else:
        batch = batch.astype(np.float32, copy=False)
    if batch.size and (batch.min() < -1e-6 or batch.max() > 1.0 + 1e-6):
        raise ValueError(
            "image values must lie in [0, 1] (uint8 input is scaled "
            f"automatically); got range [{batch.min():.3g}, {batch.max():.3g}]"
        )
    return np.ascontiguousarray(batch)


def check_label_batch(y, image_batch, void_label):
    """Coerce to an (n, h, w) int64 label batch matching the image batch."""
    y = np.asarray(y)
    if y.ndim != 3:
        raise ShapeError(f"expected a 3-d label batch (n, h, w), got shape {y.shape}")
    expected = (image_batch.shape[0],) + image_batch.shape[2:]
    if y.shape != expected:
        raise ShapeError(
            f"label batch shape {y.shape} does not match image batch "
            f"spatial shape {expected}"
        )
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise TypeError("labels must be integer class indices")
    y = y.astype(np.int64)
    real = y[y != void_label]
    if real.size and real.min() < 0:
        raise ValueError(f"negative class label {int(real.min())}")
    return y


def infer_n_classes(y, void_label):
    real = y[y != void_label]
    if real.size == 0:
        raise ValueError("cannot infer the class count: every pixel is void")
    return int(real.max()) + 1
