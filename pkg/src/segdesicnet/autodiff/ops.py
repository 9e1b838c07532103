"""Differentiable primitives over NCHW / NF float64 arrays."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import BatchSizeError, DegenerateVectorError, LabelError, ShapeError
from .tensor import Tensor, as_tensor, make_node

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_CLAMP = 1e-7
IGNORE_INDEX = 255


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def absolute(x: Tensor) -> Tensor:
    # subgradient sign(0) = 0
    return make_node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_node(out, (x,), lambda g: (g / (2.0 * out),))


def log(x: Tensor) -> Tensor:
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


# --- reductions / reshaping ------------------------------------------------


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(out, (x,), grad_fn)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(x: Tensor, shape) -> Tensor:
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat_channels(tensors: list[Tensor]) -> Tensor:
    """Concatenate along axis 1 (channels for NCHW, features for NF)."""
    if not tensors:
        raise ShapeError("nothing to concatenate")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:1] + t.shape[2:] != ref[:1] + ref[2:]:
            raise ShapeError(f"cannot concatenate {t.shape} with {ref} along channels")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=1)
    return make_node(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=1)))


# --- dense layers ---------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight shaped (out_features, in_features)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)

    def grad_fn(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_node(out, parents, grad_fn)


# --- convolution ------------------------------------------------------------


def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N*Ho*Wo, C*k*k) matrix of receptive fields."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def _col2im(cols: np.ndarray, shape_p: tuple[int, ...], k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of ``_im2col``: scatter-add (N, Ho, Wo, C, k, k) patches into a padded canvas."""
    n, c = shape_p[:2]
    out = np.zeros(shape_p)
    cols = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return out


def _crop(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return x[:, :, padding:-padding, padding:-padding]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation; weight is (C_out, C_in, k, k)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and (O, C, k, k) weight")
    n, c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c or k != k2:
        raise ShapeError(f"conv2d: input channels {c} vs weight {weight.shape}")
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: empty output for input {x.shape}, kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (gm.T @ cols).reshape(weight.shape)
        dx = None
        if x.requires_grad:
            dx = _crop(_col2im(gm @ wmat, xp.shape, k, stride, ho, wo), padding)
        grads = [dx, dw]
        if bias is not None:
            grads.append(gm.sum(axis=0))
        return grads

    return make_node(np.ascontiguousarray(out), parents, grad_fn)


def conv2d_transpose(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Adjoint of ``conv2d`` in its input; weight is (C_in, C_out, k, k)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d_transpose expects NCHW input and (C_in, C_out, k, k) weight")
    n, c, h, w = x.shape
    ci, o, k, k2 = weight.shape
    if ci != c or k != k2:
        raise ShapeError(f"conv2d_transpose: input channels {c} vs weight {weight.shape}")
    hp, wp = (h - 1) * stride + k, (w - 1) * stride + k
    if hp - 2 * padding < 1 or wp - 2 * padding < 1:
        raise ShapeError("conv2d_transpose: padding removes the whole output")
    xm = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wmat = weight.data.reshape(c, -1)
    cols = xm @ wmat
    out = _crop(_col2im(cols, (n, o, hp, wp), k, stride, h, w), padding)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        gcols = _im2col(gp, k, stride, h, w)
        dx = None
        if x.requires_grad:
            dx = (gcols @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        dw = (xm.T @ gcols).reshape(weight.shape)
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_node(np.ascontiguousarray(out), parents, grad_fn)


# --- pooling ----------------------------------------------------------------


def max_pool2(x: Tensor) -> Tensor:
    """2x2 window, stride 2; ties go to the first element in row-major order."""
    n, c, h, w = x.shape
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise ShapeError(f"max_pool2 needs even spatial dims >= 2, got {x.shape}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gb,)

    return make_node(out, (x,), grad_fn)


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel spatial max: NCHW -> NC."""
    if x.ndim != 4:
        raise ShapeError(f"global_max_pool expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, arg[..., None], g[..., None], axis=-1)
        return (gf.reshape(x.shape),)

    return make_node(out, (x,), grad_fn)


# --- normalization ----------------------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalization for NCHW or NF input.

    Training mode normalizes with biased batch statistics and folds the
    unbiased variance into the running estimates in place.
    """
    if x.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    elif x.ndim == 2:
        axes, bshape = (0,), (1, -1)
    else:
        raise ShapeError(f"batch_norm expects NCHW or NF input, got {x.shape}")
    if x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm: {x.shape[1]} channels vs {gamma.shape[0]} affine params")
    m = x.data.size // x.shape[1]
    g_ = gamma.data.reshape(bshape)
    if training:
        if x.shape[0] < 2:
            raise BatchSizeError("batch normalization in training mode needs at least 2 samples")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu, var = running_mean.copy(), running_var.copy()
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * invstd.reshape(bshape)
    out = g_ * xhat + beta.data.reshape(bshape)

    def grad_fn(gy):
        dgamma = (gy * xhat).sum(axis=axes)
        dbeta = gy.sum(axis=axes)
        dxhat = gy * g_
        if training:
            dx = (
                invstd.reshape(bshape)
                / m
                * (
                    m * dxhat
                    - dxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
                )
            )
        else:
            dx = dxhat * invstd.reshape(bshape)
        return dx, dgamma, dbeta

    return make_node(out, (x, gamma, beta), grad_fn)


# --- probabilities and losses ---------------------------------------------


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return make_node(p, (x,), grad_fn)


def cross_entropy(probs: Tensor, labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean of ``-log p[label]`` over non-ignored pixels.

    ``probs`` is N x K x H x W (or N x K); probabilities are clamped into
    ``[PROB_CLAMP, 1 - PROB_CLAMP]`` before the log, and clamped entries
    pass no gradient.
    """
    labels = np.asarray(labels)
    k = probs.shape[1]
    if labels.shape != probs.shape[:1] + probs.shape[2:]:
        raise ShapeError(f"labels {labels.shape} do not match probabilities {probs.shape}")
    valid = labels != ignore_index
    if np.any((labels[valid] < 0) | (labels[valid] >= k)):
        raise LabelError(f"label outside [0, {k - 1}] and not the ignore value {ignore_index}")
    count = int(valid.sum())
    if count == 0:
        raise LabelError("every pixel carries the ignore value")
    safe = np.where(valid, labels, 0).astype(np.intp)
    picked = np.take_along_axis(probs.data, np.expand_dims(safe, 1), axis=1)[:, 0]
    clipped = np.clip(picked, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -(np.log(clipped) * valid).sum() / count

    def grad_fn(g):
        inside = (picked > PROB_CLAMP) & (picked < 1.0 - PROB_CLAMP) & valid
        d = np.where(inside, -1.0 / np.where(inside, picked, 1.0), 0.0) * (float(g) / count)
        out = np.zeros_like(probs.data)
        np.put_along_axis(out, np.expand_dims(safe, 1), np.expand_dims(d, 1), axis=1)
        return (out,)

    return make_node(np.array(loss), (probs,), grad_fn)


def normalize_rows(x: Tensor, norm_kind: str = "l1") -> Tensor:
    """Divide every row of an N x D tensor by its L1 (or L2) norm."""
    if norm_kind == "l1":
        norm = sum(absolute(x), axis=1, keepdims=True)
    else:
        norm = sqrt(sum(mul(x, x), axis=1, keepdims=True))
    if np.any(norm.data <= 0):
        raise DegenerateVectorError("row with zero norm cannot be normalized")
    return div(x, norm)


def cosine_dissimilarity(c: Tensor, c_hat: Tensor) -> Tensor:
    """Row-wise ``1 - <c, c_hat> / (|c| |c_hat|)`` for N x D inputs (or D vectors)."""
    c, c_hat = as_tensor(c), as_tensor(c_hat)
    if c.shape != c_hat.shape:
        raise ShapeError(f"cosine dissimilarity of shapes {c.shape} and {c_hat.shape}")
    axis = c.ndim - 1
    dot = sum(mul(c, c_hat), axis=axis)
    nc = sqrt(sum(mul(c, c), axis=axis))
    nh = sqrt(sum(mul(c_hat, c_hat), axis=axis))
    if np.any(nc.data == 0) or np.any(nh.data == 0):
        raise DegenerateVectorError("cosine dissimilarity of a zero vector")
    return sub(1.0, div(dot, mul(nc, nh)))
