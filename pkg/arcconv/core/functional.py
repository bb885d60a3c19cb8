"""Differentiable operators used by the ARC layer, the router and the toy network.

Convolutions use the deep-learning convention (cross-correlation, no kernel
flip) and run as an im2col + batched GEMM. All reductions accumulate in
binary64 and cast back to the operands' dtype.
"""

import threading
from contextlib import contextmanager
from typing import Iterator, List, Optional, Tuple

import numpy as np

from arcconv.core.errors import ConfigurationError, DimensionError, InputError
from arcconv.core.tensor import Tensor, make_result

LAYER_NORM_EPS = 1e-6

_branch_log = threading.local()


@contextmanager
def branch_probe() -> Iterator[List[bytes]]:
    """Collect the branch pattern (ReLU masks, bilinear cells) of the ops run inside.

    Two evaluations with equal logs took the same piecewise branch, so a
    finite difference between them does not straddle a kink.
    """
    log: List[bytes] = []
    previous = getattr(_branch_log, "log", None)
    _branch_log.log = log
    try:
        yield log
    finally:
        _branch_log.log = previous


def record_branch(*arrays: np.ndarray) -> None:
    log = getattr(_branch_log, "log", None)
    if log is not None:
        for arr in arrays:
            log.append(np.ascontiguousarray(arr).tobytes())


def _f64(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64, copy=False)


def _out_dtype(*tensors: Tensor) -> np.dtype:
    return np.result_type(*[t.dtype for t in tensors])


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, padding: int, groups: int) -> Tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, groups, (c // groups) * k * k, ho * wo)
    return cols, ho, wo


def _col2im(grad_cols: np.ndarray, shape: Tuple[int, ...], k: int, stride: int, padding: int,
            ho: int, wo: int) -> np.ndarray:
    n, c, h, w = shape
    gc = grad_cols.reshape(n, c, k, k, ho, wo)
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += gc[:, :, i, j]
    return dxp[:, :, padding : padding + h, padding : padding + w]


def grouped_conv2d(x: Tensor, w: Tensor, groups: int = 1, stride: int = 1, padding: int = 0) -> Tensor:
    """Grouped 2-D convolution: group i convolves input slab i with kernel slab i.

    x: [N, C_in, H, W]; w: [C_out, C_in/groups, k, k]. groups == C_in gives a
    depthwise convolution.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv expects 4-D input and kernel, got {x.shape} and {w.shape}")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"invalid stride {stride} / padding {padding}")
    n, c_in, h, wd = x.shape
    c_out, c_group, k, k2 = w.shape
    if k != k2:
        raise DimensionError(f"square kernels only, got {k}x{k2}")
    if groups < 1 or c_in % groups or c_out % groups:
        raise ConfigurationError(f"groups={groups} must divide C_in={c_in} and C_out={c_out}")
    if c_group * groups != c_in:
        raise DimensionError(f"input has {c_in} channels, kernel expects {c_group * groups}")
    if k > h + 2 * padding or k > wd + 2 * padding:
        raise DimensionError(f"kernel {k} larger than padded input {h}x{wd} (padding {padding})")

    dtype = _out_dtype(x, w)
    cols, ho, wo = _im2col(_f64(x.data), k, stride, padding, groups)
    wm = _f64(w.data).reshape(groups, c_out // groups, c_group * k * k)
    out = np.matmul(wm[None], cols).reshape(n, c_out, ho, wo)

    def backward(g):
        go = _f64(g).reshape(n, groups, c_out // groups, ho * wo)
        grad_x = grad_w = None
        if x.requires_grad:
            grad_cols = np.matmul(wm.transpose(0, 2, 1)[None], go)
            grad_x = _col2im(grad_cols, x.shape, k, stride, padding, ho, wo)
        if w.requires_grad:
            grad_w = np.matmul(go, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
        return grad_x, grad_w

    return make_result(out.astype(dtype, copy=False), (x, w), backward, "grouped_conv2d")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Plain 2-D convolution: [N, C_in, H, W] * [C_out, C_in, k, k]."""
    return grouped_conv2d(x, w, groups=1, stride=stride, padding=padding)


def patches(x: Tensor, k: int, stride: int = 1, padding: int = 0) -> Tensor:
    """im2col as a tape op: [N, C, H, W] -> [N, C*k*k, Ho*Wo] (binary64).

    Rows are ordered (channel, kernel row, kernel column), matching a
    [C_out, C, k, k] kernel flattened to [C_out, C*k*k].
    """
    if x.ndim != 4:
        raise DimensionError(f"patches expects a 4-D tensor, got {x.shape}")
    if k < 1 or stride < 1 or padding < 0:
        raise ConfigurationError(f"invalid window k={k} stride={stride} padding={padding}")
    n, c, h, w = x.shape
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(f"kernel {k} larger than padded input {h}x{w} (padding {padding})")
    cols, ho, wo = _im2col(_f64(x.data), k, stride, padding, 1)
    cols = cols.reshape(n, c * k * k, ho * wo)
    return make_result(cols, (x,), lambda g: (_col2im(g, x.shape, k, stride, padding, ho, wo),), "patches")


def depthwise_from_patches(cols: Tensor, w: Tensor, out_hw: Tuple[int, int]) -> Tensor:
    """Depthwise convolution read off precomputed patches; w: [C, 1, k, k]."""
    ho, wo = out_hw
    n, rows, p = cols.shape
    if w.ndim != 4 or w.shape[1] != 1 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"depthwise kernel must be [C, 1, k, k], got {w.shape}")
    c, k = w.shape[0], w.shape[2]
    if rows != c * k * k or p != ho * wo:
        raise DimensionError(f"depthwise kernel {w.shape} does not match patches {cols.shape}")
    dtype = w.dtype
    cd = cols.data.reshape(n, c, k * k, p)
    wm = _f64(w.data).reshape(c, 1, k * k)
    out = np.matmul(wm[None], cd).reshape(n, c, ho, wo)

    def backward(g):
        go = _f64(g).reshape(n, c, 1, p)
        grad_cols = np.matmul(wm.transpose(0, 2, 1)[None], go).reshape(n, rows, p) if cols.requires_grad else None
        grad_w = np.matmul(go, cd.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape) if w.requires_grad else None
        return grad_cols, grad_w

    return make_result(out.astype(dtype, copy=False), (cols, w), backward, "depthwise_from_patches")


def conv_from_patches(cols: Tensor, kernels: Tensor, out_hw: Tuple[int, int]) -> Tensor:
    """Per-sample convolution: sample b's patches times kernels[b] ([N, C_out, C, k, k])."""
    ho, wo = out_hw
    n, rows, p = cols.shape
    if kernels.ndim != 5 or kernels.shape[0] != n or p != ho * wo \
            or kernels.shape[2] * kernels.shape[3] * kernels.shape[4] != rows:
        raise DimensionError(f"kernels {kernels.shape} do not match patches {cols.shape}")
    c_out = kernels.shape[1]
    dtype = kernels.dtype
    wm = _f64(kernels.data).reshape(n, c_out, rows)
    out = np.matmul(wm, cols.data).reshape(n, c_out, ho, wo)

    def backward(g):
        go = _f64(g).reshape(n, c_out, p)
        grad_cols = np.matmul(wm.transpose(0, 2, 1), go) if cols.requires_grad else None
        grad_k = np.matmul(go, cols.data.transpose(0, 2, 1)).reshape(kernels.shape) if kernels.requires_grad else None
        return grad_cols, grad_k

    return make_result(out.astype(dtype, copy=False), (cols, kernels), backward, "conv_from_patches")


def channel_layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the channel vector at every (n, h, w) position, then apply a per-channel affine."""
    if eps <= 0:
        raise ConfigurationError("layer norm eps must be > 0")
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"layer norm shapes {x.shape}, {gamma.shape}, {beta.shape} do not conform")
    dtype = _out_dtype(x, gamma, beta)
    c = x.shape[1]
    xd = _f64(x.data)
    xc = xd - xd.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    g_ = _f64(gamma.data).reshape(1, c, 1, 1)
    out = xhat * g_ + _f64(beta.data).reshape(1, c, 1, 1)

    def backward(g):
        g = _f64(g)
        dxhat = g * g_
        grad_x = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return grad_x, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_result(out.astype(dtype, copy=False), (x, gamma, beta), backward, "channel_layer_norm")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    record_branch(mask)
    return make_result(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,),
                       lambda g: (g * mask,), "relu")


def softsign(x: Tensor) -> Tensor:
    """x / (1 + |x|), odd and open-ranged in (-1, 1)."""
    denom = 1.0 + np.abs(_f64(x.data))
    return make_result((_f64(x.data) / denom).astype(x.dtype), (x,),
                       lambda g: (g / (denom * denom),), "softsign")


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * _f64(x.data)))
    return make_result(s.astype(x.dtype), (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def global_avg_pool(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C] spatial mean."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects a 4-D tensor, got {x.shape}")
    shape = x.shape
    area = shape[2] * shape[3]
    out = _f64(x.data).sum(axis=(2, 3)) / area
    return make_result(out.astype(x.dtype, copy=False), (x,),
                       lambda g: (np.broadcast_to(_f64(g)[:, :, None, None] / area, shape).copy(),),
                       "global_avg_pool")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """y = x . weight^T (+ bias)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear shapes {x.shape} and {weight.shape} do not conform")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    parents = (x, weight) if bias is None else (x, weight, bias)
    dtype = _out_dtype(*parents)
    xd, wdat = _f64(x.data), _f64(weight.data)
    out = xd @ wdat.T
    if bias is not None:
        out = out + _f64(bias.data)

    def backward(g):
        g = _f64(g)
        grads = [g @ wdat if x.requires_grad else None,
                 g.T @ xd if weight.requires_grad else None]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_result(out.astype(dtype, copy=False), parents, backward, "linear")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class (max-subtracted)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} do not conform")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError("labels must be integers")
    k = logits.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    n = logits.shape[0]
    z = _f64(logits.data)
    z = z - z.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -log_probs[rows, labels].sum() / n

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (_f64(g) / n),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "softmax_cross_entropy")


def predict_classes(logits: Tensor) -> np.ndarray:
    """Arg-max class per row (no tape)."""
    return np.argmax(logits.data, axis=1)
