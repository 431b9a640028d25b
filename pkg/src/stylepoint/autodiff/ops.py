"""Differentiable operations over :class:`Tensor`.

Shapes follow numpy broadcasting for elementwise ops. Images are NHWC,
conv weights are (kh, kw, c_in, c_out), point features are (N, C).
Reductions that need a tie-break (max/argmax) take the lowest index, so
backward passes are deterministic.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, record_op


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / broadcasting arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return record_op([a, b], out, bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.data.shape) if b.requires_grad else None)

    return record_op([a, b], out, bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return record_op([a, b], out, bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bwd(g):
        return (_unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
                if b.requires_grad else None)

    return record_op([a, b], out, bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return record_op([a, b], out, bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        return (g * (x.data > 0),)

    return record_op([x], out, bwd)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    dt = x.data.dtype.type
    out = np.where(x.data > 0, x.data, dt(slope) * x.data)

    def bwd(g):
        return (g * np.where(x.data > 0, dt(1.0), dt(slope)),)

    return record_op([x], out, bwd)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return record_op([x], out, bwd)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def bwd(g):
        return (g * out,)

    return record_op([x], out, bwd)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return record_op([x], out, bwd)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def bwd(g):
        return (g / (2.0 * out),)

    return record_op([x], out, bwd)


def abs_(x) -> Tensor:
    x = as_tensor(x)
    out = np.abs(x.data)

    def bwd(g):
        return (g * np.sign(x.data),)

    return record_op([x], out, bwd)


def clamp_min(x, min_value: float) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, float(min_value))

    def bwd(g):
        return (g * (x.data >= float(min_value)),)

    return record_op([x], out, bwd)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return record_op([x], out, bwd)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return record_op([x], np.asarray(out), bwd)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims, dtype=x.data.dtype)
    n = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])

    def bwd(g):
        if axis is None:
            gg = g
        elif not keepdims:
            gg = np.expand_dims(g, axis)
        else:
            gg = g
        return (np.broadcast_to(gg / x.data.dtype.type(n), x.data.shape).copy(),)

    return record_op([x], np.asarray(out), bwd)


def reduce_var(x, axis: int = 0, keepdims: bool = False) -> Tensor:
    """Population variance (ddof=0) along one axis."""
    x = as_tensor(x)
    mu = x.data.mean(axis=axis, keepdims=True, dtype=x.data.dtype)
    centered = x.data - mu
    out = (centered * centered).mean(axis=axis, keepdims=keepdims, dtype=x.data.dtype)
    n = x.data.shape[axis]

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (2.0 / n * centered * gg,)

    return record_op([x], np.asarray(out), bwd)


def reduce_max(x, axis: int, keepdims: bool = False) -> Tensor:
    """Max along ``axis``; gradient flows only to the recorded argmax (first-index ties)."""
    x = as_tensor(x)
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(arg, axis), gg, axis=axis)
        return (gx,)

    return record_op([x], out, bwd)


# ---------------------------------------------------------------------------
# indexing and layout


def _segment_add(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """Row-scatter-accumulate via stable sort + reduceat.

    Equivalent to np.add.at(out, idx, values) but vectorized across the
    feature axes; summation order within a segment is fixed (stable sort,
    left-to-right reduction), so the result is deterministic.
    """
    out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    if len(idx) == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    sval = values[order]
    starts = np.concatenate([[0], np.nonzero(np.diff(sidx))[0] + 1])
    out[sidx[starts]] = np.add.reduceat(sval, starts, axis=0)
    return out


def gather(x, indices) -> Tensor:
    """Select rows along axis 0; output shape is indices.shape + x.shape[1:]."""
    x = as_tensor(x)
    idx = np.asarray(indices)
    out = x.data[idx]

    def bwd(g):
        flat_idx = idx.reshape(-1)
        flat_g = g.reshape((flat_idx.size,) + x.data.shape[1:])
        return (_segment_add(flat_g, flat_idx, x.data.shape[0]),)

    return record_op([x], out, bwd)


def scatter_add(x, indices, out_rows: int) -> Tensor:
    """Accumulate rows of ``x`` into a (out_rows, ...) buffer at ``indices``.

    Adjoint of :func:`gather`: <gather(F, idx), G> == <F, scatter_add(G, idx, N)>.
    """
    x = as_tensor(x)
    idx = np.asarray(indices)
    if idx.shape[0] != x.data.shape[0]:
        raise ShapeError(f"scatter_add index count {idx.shape} != rows of {x.data.shape}")
    out = _segment_add(x.data, idx, out_rows)

    def bwd(g):
        return (g[idx],)

    return record_op([x], out, bwd)


def _sparse_linear(x: Tensor, rows: np.ndarray, cols: np.ndarray, data: np.ndarray,
                   out_rows: int) -> Tensor:
    """out = W @ x for a fixed sparse W given in COO triplets; backward W^T @ g.

    CSR products run row-sequentially in scipy, so forward and backward are
    deterministic.
    """
    from scipy import sparse

    n = x.data.shape[0]
    mat = sparse.csr_matrix((data.astype(x.data.dtype), (rows, cols)),
                            shape=(out_rows, n))
    out = mat @ x.data
    mat_t = None

    def bwd(g):
        nonlocal mat_t
        if mat_t is None:
            mat_t = mat.T.tocsr()
        return (mat_t @ g,)

    return record_op([x], out, bwd)


def weighted_gather(x, indices, weights) -> Tensor:
    """out[m] = sum_k weights[m,k] * x[indices[m,k]].

    Fused gather/scale/sum with constant geometry (indices, weights);
    linear in x. Backbone of IDW upsampling and bilinear image sampling.
    """
    x = as_tensor(x)
    idx = np.asarray(indices)
    w = np.asarray(weights)
    m, k = idx.shape
    rows = np.repeat(np.arange(m, dtype=np.int64), k)
    return _sparse_linear(x, rows, idx.reshape(-1), w.reshape(-1), m)


def weighted_scatter(x, src_indices, dst_indices, weights, out_rows: int) -> Tensor:
    """out[dst[e]] += weights[e] * x[src[e]] over contribution entries e.

    Fused gather/scale/scatter with constant geometry; linear in x, and its
    backward is the transposed scatter with identical weights.
    """
    x = as_tensor(x)
    return _sparse_linear(x, np.asarray(dst_indices), np.asarray(src_indices),
                          np.asarray(weights), out_rows)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return record_op(tensors, out, bwd)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return record_op([x], out, bwd)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return record_op([x], out, bwd)


# ---------------------------------------------------------------------------
# convolutions (NHWC, weight (kh, kw, c_in, c_out))


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(B,H,W,C) -> (B,Ho,Wo,kh*kw*C) patch matrix."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    b, hp, wp, c = x.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]                     # (B,Ho,Wo,C,kh,kw)
    win = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return win.reshape(b, ho, wo, kh * kw * c)


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of _im2col: scatter patch gradients back onto the image."""
    b, h, w, c = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho, wo = cols.shape[1], cols.shape[2]
    cols = cols.reshape(b, ho, wo, kh, kw, c)
    out = np.zeros((b, hp, wp, c), dtype=cols.dtype)
    for ky in range(kh):
        for kx in range(kw):
            out[:, ky:ky + ho * stride:stride, kx:kx + wo * stride:stride] += cols[:, :, :, ky, kx]
    if pad:
        out = out[:, pad:hp - pad, pad:wp - pad]
    return out


def conv2d(x, w, stride: int = 1, pad: int | None = None) -> Tensor:
    """2D cross-correlation. ``pad=None`` means same-padding (k//2)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input and 4D weight, got {x.shape}, {w.shape}")
    kh, kw, ci, co = w.shape
    if x.shape[3] != ci:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    if pad is None:
        pad = kh // 2
    cols = _im2col(x.data, kh, kw, stride, pad)
    b, ho, wo, _ = cols.shape
    flat = cols.reshape(-1, kh * kw * ci)
    out = (flat @ w.data.reshape(-1, co)).reshape(b, ho, wo, co)

    def bwd(g):
        gf = g.reshape(-1, co)
        gw = (flat.T @ gf).reshape(kh, kw, ci, co) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gf @ w.data.reshape(-1, co).T).reshape(b, ho, wo, kh * kw * ci)
            gx = _col2im(gcols, x.data.shape, kh, kw, stride, pad)
        return gx, gw

    return record_op([x, w], out, bwd)


def conv2d_transpose(x, w, stride: int = 2) -> Tensor:
    """Transposed conv upsampling (B,H,W,ci) -> (B,H*stride,W*stride,co).

    Exact adjoint of ``conv2d(stride=stride, pad=k//2)`` on the upsampled
    grid, so kernel 3 / stride 2 matches the usual output-padding-1 layout.
    """
    x, w = as_tensor(x), as_tensor(w)
    kh, kw, ci, co = w.shape
    if x.shape[3] != ci:
        raise ShapeError(f"conv2d_transpose channel mismatch: input {x.shape} vs weight {w.shape}")
    pad = kh // 2
    b, h, wd, _ = x.shape
    out_shape = (b, h * stride, wd * stride, co)
    flat = x.data.reshape(-1, ci)
    cols = (flat @ w.data.reshape(kh * kw, ci, co).transpose(1, 0, 2).reshape(ci, -1))
    cols = cols.reshape(b, h, wd, kh * kw * co)
    out = _col2im(cols, out_shape, kh, kw, stride, pad)

    def bwd(g):
        gcols = _im2col(g, kh, kw, stride, pad).reshape(-1, kh * kw * co)
        gx = None
        if x.requires_grad:
            gx = (gcols @ w.data.reshape(kh * kw, ci, co).transpose(1, 0, 2)
                  .reshape(ci, -1).T).reshape(b, h, wd, ci)
        gw = (flat.T @ gcols).reshape(ci, kh, kw, co).transpose(1, 2, 0, 3) \
            if w.requires_grad else None
        return gx, gw

    return record_op([x, w], out, bwd)


# ---------------------------------------------------------------------------
# normalization


class BatchNormState:
    """Running statistics for one batch-norm layer (not learnable)."""

    def __init__(self, channels: int):
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel (last axis) batch norm over all leading axes.

    Training mode always uses batch statistics and updates the running
    buffers; inference uses the frozen running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    red = tuple(range(x.ndim - 1))
    dt = x.data.dtype
    n = int(np.prod([x.data.shape[a] for a in red]))
    if training:
        mu = x.data.mean(axis=red, dtype=dt)
        var = x.data.var(axis=red, dtype=dt)
        state.running_mean += momentum * (mu - state.running_mean)
        state.running_var += momentum * (var - state.running_var)
    else:
        mu, var = state.running_mean.astype(dt), state.running_var.astype(dt)
    inv = 1.0 / np.sqrt(var + dt.type(eps))
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        if training:
            gx = (gamma.data * inv / n) * (n * g - gbeta - xhat * ggamma)
        else:
            gx = g * gamma.data * inv
        return gx.astype(dt), ggamma, gbeta

    return record_op([x, gamma, beta], out.astype(dt), bwd)


def instance_standardize(x, axis: int = 0, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) per remaining channel along one axis.

    A single sample along ``axis`` standardizes to the zero vector (the
    eps guard absorbs the 0/0).
    """
    x = as_tensor(x)
    dt = x.data.dtype
    mu = x.data.mean(axis=axis, keepdims=True, dtype=dt)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axis, keepdims=True, dtype=dt)
    inv = 1.0 / np.sqrt(var + dt.type(eps))
    xhat = centered * inv
    n = x.data.shape[axis]

    def bwd(g):
        gsum = g.sum(axis=axis, keepdims=True)
        proj = (g * xhat).sum(axis=axis, keepdims=True)
        gx = inv / n * (n * g - gsum - xhat * proj)
        return (gx.astype(dt),)

    return record_op([x], xhat.astype(dt), bwd)


def linear(x, w, b=None) -> Tensor:
    """Row-wise affine map: (N, ci) @ (ci, co) [+ b]."""
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y
