"""Forward kernels and their recorded backward passes.

Every public function takes :class:`~fcdensenet.tensor.Tensor` feature maps,
computes the forward result with numpy, and, when a :class:`Graph` is active
and any input is tracked, records a node whose closure maps the output
gradient to input-gradient contributions.

Conventions fixed here:
  * convolutions are cross-correlations (no kernel flip), zero padding for
    "same" 3x3;
  * the stride-2 transposed convolution produces exactly (2h, 2w) by
    cropping the trailing row/column of the scatter result;
  * max pooling floors odd spatial dims and routes gradient to the first
    row-major maximum of each window;
  * dropout is inverted (survivors scaled by 1/(1-p)) so eval is identity.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DegenerateInputError, ShapeError
from .tensor import Graph, Tensor


def _require_4d(x, what):
    if x.values.ndim != 4:
        raise ShapeError(f"{what} must be 4-d (n, c, h, w), got shape {x.values.shape}")


def _maybe_record(op, inputs, output, backward_fn):
    output.requires_grad = any(t.requires_grad for t in inputs)
    graph = Graph.current()
    if graph is not None and output.requires_grad:
        graph.record(op, inputs, output, backward_fn)
    return output


def _im2col(xp, kh, kw):
    # (n, c, hp, wp) -> (n, c*kh*kw, ho*wo); the reshape materializes a copy
    n, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp, (n, c, kh, kw, ho, wo), (sn, sc, sh, sw, sh, sw), writeable=False
    )
    return patches.reshape(n, c * kh * kw, ho * wo), ho, wo


def conv2d(x, weight, bias=None, padding="same"):
    """2-d convolution with square 1x1 or 3x3 kernels.

    ``weight`` has shape (out_c, in_c, kh, kw). "same" zero-pads 3x3 kernels
    by one pixel so spatial dims are preserved; 1x1 kernels never need
    padding. Linear in both the input and the weight.
    """
    _require_4d(x, "conv2d input")
    if weight.values.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-d, got shape {weight.values.shape}")
    n, c, h, w = x.values.shape
    out_c, in_c, kh, kw = weight.values.shape
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d supports square 1x1/3x3 kernels, got {kh}x{kw}")
    if in_c != c:
        raise ShapeError(
            f"conv2d channel mismatch: input has {c} channels, kernel expects {in_c}"
        )
    if padding not in ("same", "none"):
        raise ValueError(f"padding must be 'same' or 'none', got {padding!r}")
    if bias is not None and bias.values.shape != (out_c,):
        raise ShapeError(
            f"bias shape {bias.values.shape} does not match out_c={out_c}"
        )

    pad = 1 if (padding == "same" and kh == 3) else 0
    xv, wv = x.values, weight.values

    if kh == 1:
        # 1x1 fast path: a channel-mixing matmul, no im2col copy
        cols = xv.reshape(n, c, h * w)
        ho, wo = h, w
    else:
        xp = np.pad(xv, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xv
        cols, ho, wo = _im2col(xp, kh, kw)
    wmat = wv.reshape(out_c, -1)
    out = np.matmul(wmat, cols).reshape(n, out_c, ho, wo)
    if bias is not None:
        out += bias.values[None, :, None, None]
    result = Tensor(out)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gm = g.reshape(n, out_c, ho * wo)
        contribs = []
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gm)  # (n, c*kh*kw, L)
            if kh == 1:
                dx = dcols.reshape(n, c, h, w)
            else:
                dc = dcols.reshape(n, c, kh, kw, ho, wo)
                dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + ho, j:j + wo] += dc[:, :, i, j]
                dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
            contribs.append((x, dx))
        if weight.requires_grad:
            go_flat = gm.transpose(1, 0, 2).reshape(out_c, -1)
            cols_flat = cols.transpose(1, 0, 2).reshape(cols.shape[1], -1)
            contribs.append((weight, (go_flat @ cols_flat.T).reshape(wv.shape)))
        if bias is not None and bias.requires_grad:
            contribs.append((bias, g.sum(axis=(0, 2, 3))))
        return contribs

    return _maybe_record("conv2d", inputs, result, backward)


def transposed_conv2d(x, weight, stride=2):
    """Stride-2 transposed convolution with a 3x3 kernel.

    ``weight`` has shape (in_c, out_c, 3, 3). The scatter result of size
    (2h+1, 2w+1) is cropped to exactly (2h, 2w), making the op the adjoint
    of a stride-2 valid convolution with the same kernel.
    """
    _require_4d(x, "transposed_conv2d input")
    if stride != 2:
        raise ValueError(f"only stride=2 is supported, got {stride}")
    n, c, h, w = x.values.shape
    in_c, out_c, kh, kw = weight.values.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"transposed_conv2d kernel must be 3x3, got {kh}x{kw}")
    if in_c != c:
        raise ShapeError(
            f"transposed_conv2d channel mismatch: input has {c} channels, "
            f"kernel expects {in_c}"
        )

    xv, wv = x.values, weight.values
    xt = xv.transpose(0, 2, 3, 1)  # (n, h, w, c)
    buf = np.zeros((n, out_c, 2 * h + 1, 2 * w + 1), dtype=xv.dtype)
    for di in range(3):
        for dj in range(3):
            contrib = xt @ wv[:, :, di, dj]  # (n, h, w, out_c)
            buf[:, :, di:di + 2 * h:2, dj:dj + 2 * w:2] += contrib.transpose(0, 3, 1, 2)
    result = Tensor(np.ascontiguousarray(buf[:, :, :2 * h, :2 * w]))

    def backward(g):
        gp = np.zeros((n, out_c, 2 * h + 1, 2 * w + 1), dtype=g.dtype)
        gp[:, :, :2 * h, :2 * w] = g
        contribs = []
        dx = np.zeros_like(xv) if x.requires_grad else None
        dw = np.zeros_like(wv) if weight.requires_grad else None
        for di in range(3):
            for dj in range(3):
                sl = gp[:, :, di:di + 2 * h:2, dj:dj + 2 * w:2]  # (n, out_c, h, w)
                if dx is not None:
                    slt = sl.transpose(0, 2, 3, 1)
                    dx += (slt @ wv[:, :, di, dj].T).transpose(0, 3, 1, 2)
                if dw is not None:
                    dw[:, :, di, dj] = np.tensordot(xv, sl, axes=([0, 2, 3], [0, 2, 3]))
        if dx is not None:
            contribs.append((x, dx))
        if dw is not None:
            contribs.append((weight, dw))
        return contribs

    return _maybe_record("transposed_conv2d", (x, weight), result, backward)


def max_pool2x2(x):
    """Non-overlapping 2x2 max pooling; odd trailing rows/cols are dropped."""
    _require_4d(x, "max_pool2x2 input")
    n, c, h, w = x.values.shape
    if h < 2 or w < 2:
        raise DegenerateInputError(
            f"max_pool2x2 needs h, w >= 2, got spatial dims ({h}, {w})"
        )
    h2, w2 = h // 2, w // 2
    windows = (
        x.values[:, :, :2 * h2, :2 * w2]
        .reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    idx = windows.argmax(axis=-1)  # first max in row-major window order
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    result = Tensor(out)

    def backward(g):
        buf = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        dense = (
            buf.reshape(n, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, 2 * h2, 2 * w2)
        )
        if 2 * h2 == h and 2 * w2 == w:
            return [(x, dense)]
        dx = np.zeros((n, c, h, w), dtype=g.dtype)
        dx[:, :, :2 * h2, :2 * w2] = dense
        return [(x, dx)]

    return _maybe_record("max_pool2x2", (x,), result, backward)


def batch_norm(x, gamma, beta, eps=1e-5):
    """Per-channel normalization using the statistics of the current batch.

    Statistics are taken over (n, h, w) for each channel; no running
    averages exist anywhere, so train/eval behave identically.
    """
    _require_4d(x, "batch_norm input")
    n, c, h, w = x.values.shape
    if gamma.values.shape != (c,) or beta.values.shape != (c,):
        raise ShapeError(
            f"gamma/beta must have shape ({c},), got {gamma.values.shape} "
            f"and {beta.values.shape}"
        )
    count = n * h * w
    if count == 1:
        raise DegenerateInputError(
            "batch_norm variance is undefined for a single-element batch "
            f"(n*h*w == 1 with shape {x.values.shape})"
        )
    xv = x.values
    mean = xv.mean(axis=(0, 2, 3))
    var = xv.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xv.dtype))
    xhat = (xv - mean[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.values[None, :, None, None] * xhat + beta.values[None, :, None, None]
    result = Tensor(out)

    def backward(g):
        contribs = []
        if beta.requires_grad:
            contribs.append((beta, g.sum(axis=(0, 2, 3))))
        sum_g = g.sum(axis=(0, 2, 3))
        sum_g_xhat = (g * xhat).sum(axis=(0, 2, 3))
        if gamma.requires_grad:
            contribs.append((gamma, sum_g_xhat))
        if x.requires_grad:
            coeff = (gamma.values * inv / count)[None, :, None, None]
            dx = coeff * (
                count * g
                - sum_g[None, :, None, None]
                - xhat * sum_g_xhat[None, :, None, None]
            )
            contribs.append((x, dx))
        return contribs

    return _maybe_record("batch_norm", (x, gamma, beta), result, backward)


def relu(x):
    mask = x.values > 0
    result = Tensor(np.where(mask, x.values, np.zeros((), dtype=x.dtype)))

    def backward(g):
        return [(x, g * mask)]

    return _maybe_record("relu", (x,), result, backward)


def dropout(x, p, mode, rng=None):
    """Inverted dropout: in train mode each element is zeroed with
    probability ``p`` and survivors are scaled by 1/(1-p); eval is identity."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode with p > 0 requires an rng")
    keep = rng.random(x.values.shape) >= p
    scaled_mask = keep.astype(x.dtype) / np.asarray(1.0 - p, dtype=x.dtype)
    result = Tensor(x.values * scaled_mask)

    def backward(g):
        return [(x, g * scaled_mask)]

    return _maybe_record("dropout", (x,), result, backward)


def concat_channels(a, b):
    """Concatenate along the channel axis, a's channels first."""
    _require_4d(a, "concat_channels first input")
    _require_4d(b, "concat_channels second input")
    na, ca, ha, wa = a.values.shape
    nb, cb, hb, wb = b.values.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(
            f"concat_channels needs matching (n, h, w): {a.values.shape} vs "
            f"{b.values.shape}"
        )
    result = Tensor(np.concatenate([a.values, b.values], axis=1))

    def backward(g):
        contribs = []
        if a.requires_grad:
            contribs.append((a, g[:, :ca]))
        if b.requires_grad:
            contribs.append((b, g[:, ca:]))
        return contribs

    return _maybe_record("concat_channels", (a, b), result, backward)


def slice_channels(x, start, stop):
    """Channel slice x[:, start:stop]; the inverse of concat_channels."""
    _require_4d(x, "slice_channels input")
    c = x.values.shape[1]
    if not (0 <= start < stop <= c):
        raise ShapeError(f"invalid channel slice [{start}:{stop}] for {c} channels")
    result = Tensor(np.ascontiguousarray(x.values[:, start:stop]))

    def backward(g):
        dx = np.zeros_like(x.values)
        dx[:, start:stop] = g
        return [(x, dx)]

    return _maybe_record("slice_channels", (x,), result, backward)


def crop_center(x, target_h, target_w):
    """Center-crop spatial dims to (target_h, target_w)."""
    _require_4d(x, "crop_center input")
    n, c, h, w = x.values.shape
    if target_h > h or target_w > w:
        raise ShapeError(
            f"cannot crop ({h}, {w}) up to ({target_h}, {target_w}); "
            "upsampled map is smaller than the skip connection"
        )
    oh = (h - target_h) // 2
    ow = (w - target_w) // 2
    if (oh, ow) == (0, 0) and (target_h, target_w) == (h, w):
        return x
    result = Tensor(np.ascontiguousarray(
        x.values[:, :, oh:oh + target_h, ow:ow + target_w]
    ))

    def backward(g):
        dx = np.zeros_like(x.values)
        dx[:, :, oh:oh + target_h, ow:ow + target_w] = g
        return [(x, dx)]

    return _maybe_record("crop_center", (x,), result, backward)


def sum_all(x):
    """Sum of all elements as a 0-d tensor (handy as a test loss)."""
    result = Tensor(np.asarray(x.values.sum(), dtype=x.dtype))

    def backward(g):
        return [(x, np.broadcast_to(g, x.values.shape).astype(x.dtype, copy=False))]

    return _maybe_record("sum_all", (x,), result, backward)


def weighted_sum(x, weights):
    """sum(x * weights) for a constant weight array, as a 0-d tensor.

    Turns any op output into a scalar with a nondegenerate gradient, which
    is what finite-difference checking needs.
    """
    weights = np.asarray(weights, dtype=x.dtype)
    if weights.shape != x.values.shape:
        raise ShapeError(
            f"weights shape {weights.shape} != tensor shape {x.values.shape}"
        )
    result = Tensor(np.asarray((x.values * weights).sum(), dtype=x.dtype))

    def backward(g):
        return [(x, g * weights)]

    return _maybe_record("weighted_sum", (x,), result, backward)


def softmax_cross_entropy(logits, targets, void_label=None):
    """Pixel-wise softmax + mean cross-entropy over non-void pixels.

    ``targets`` is an integer (n, h, w) class map. Pixels equal to
    ``void_label`` contribute neither loss nor gradient. Returns the 0-d
    loss tensor and the (n, c, h, w) probability array.
    """
    _require_4d(logits, "softmax_cross_entropy logits")
    n, c, h, w = logits.values.shape
    targets = np.asarray(targets)
    if targets.shape != (n, h, w):
        raise ShapeError(
            f"targets shape {targets.shape} does not match logits spatial "
            f"shape {(n, h, w)}"
        )
    if not np.issubdtype(targets.dtype, np.integer):
        raise TypeError(f"targets must be integer class indices, got {targets.dtype}")
    valid = np.ones((n, h, w), dtype=bool) if void_label is None \
        else targets != void_label
    bad = valid & ((targets < 0) | (targets >= c))
    if bad.any():
        offender = int(targets[bad][0])
        raise ShapeError(
            f"target class {offender} outside [0, {c}) and != void_label "
            f"({void_label})"
        )

    lv = logits.values
    shifted = lv - lv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    probs = np.exp(logp)

    n_valid = int(valid.sum())
    safe_targets = np.where(valid, targets, 0)[:, None]  # (n, 1, h, w)
    picked = np.take_along_axis(logp, safe_targets, axis=1)[:, 0]
    if n_valid == 0:
        loss_value = np.asarray(0.0, dtype=lv.dtype)
    else:
        loss_value = np.asarray(-(picked * valid).sum() / n_valid, dtype=lv.dtype)
    loss = Tensor(loss_value)

    def backward(g):
        if n_valid == 0:
            return [(logits, np.zeros_like(lv))]
        scale = (valid.astype(lv.dtype) / n_valid) * g
        d = probs * scale[:, None]
        at_target = np.take_along_axis(d, safe_targets, axis=1)
        np.put_along_axis(d, safe_targets, at_target - scale[:, None], axis=1)
        return [(logits, d)]

    _maybe_record("softmax_cross_entropy", (logits,), loss, backward)
    return loss, probs


def softmax_channels(values):
    """Plain numpy channel softmax for inference-time probabilities."""
    values = np.asarray(values)
    shifted = values - values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)
