"""Neural-network operators on top of the autodiff core: 3D convolution,
linear maps, group normalization, cross-attention, resampling and losses.

Shape conventions: feature maps are (N, C, D, H, W); token sequences are
(tokens, dim).  Convolution uses cross-correlation semantics with zero
padding, matching the usual deep-learning definition.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DataError
from .core import Tensor, _result, matmul, reshape, scale, softmax


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: y = x @ W^T + b, W of shape (out, in)."""
    if weight.data.ndim != 2:
        raise DataError(f"linear: weight must be 2D, got {weight.data.shape}")
    fout, fin = weight.data.shape
    if x.data.shape[-1] != fin:
        raise DataError(f"linear: input last axis {x.data.shape[-1]} != weight in-features {fin}")
    if bias is not None and bias.data.shape != (fout,):
        raise DataError(f"linear: bias shape {bias.data.shape} != ({fout},)")
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, fin)
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def vjp(g):
        g2 = g.reshape(-1, fout)
        dx = (g2 @ weight.data).reshape(x.data.shape)
        dw = g2.T @ x2
        if bias is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out.reshape(lead + (fout,)), parents, vjp)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """3D cross-correlation with zero padding.

    x: (N, Cin, D, H, W); weight: (Cout, Cin, kd, kh, kw); bias: (Cout,).
    """
    if x.data.ndim != 5 or weight.data.ndim != 5:
        raise DataError(f"conv3d: need 5D input and kernel, got {x.data.shape} and {weight.data.shape}")
    n, cin, d, h, w = x.data.shape
    cout, cin_k, kd, kh, kw = weight.data.shape
    if cin != cin_k:
        raise DataError(f"conv3d: input channels {cin} != kernel channels {cin_k} "
                        f"(shapes {x.data.shape} vs {weight.data.shape})")
    od = (d + 2 * pad - kd) // stride + 1
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if min(od, oh, ow) < 1:
        raise DataError(f"conv3d: non-positive output extents ({od},{oh},{ow}) "
                        f"for input {x.data.shape}, kernel {weight.data.shape}, "
                        f"stride {stride}, pad {pad}")
    if bias is not None and bias.data.shape != (cout,):
        raise DataError(f"conv3d: bias shape {bias.data.shape} != ({cout},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride]  # (N, Cin, OD, OH, OW, kd, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)) \
        .reshape(n, od, oh, ow, cin * kd * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T  # (N, OD, OH, OW, Cout)
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))

    def vjp(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1))  # N, OD, OH, OW, Cout
        g2 = gt.reshape(-1, cout)
        dw = (g2.T @ cols.reshape(-1, cols.shape[-1])).reshape(weight.data.shape)
        dxp = np.zeros_like(xp)
        for a in range(kd):
            for b in range(kh):
                for c in range(kw):
                    contrib = g2 @ weight.data[:, :, a, b, c]  # (N*OD*OH*OW, Cin)
                    contrib = contrib.reshape(n, od, oh, ow, cin).transpose(0, 4, 1, 2, 3)
                    dxp[:, :, a:a + stride * od:stride,
                        b:b + stride * oh:stride,
                        c:c + stride * ow:stride] += contrib
        dx = dxp[:, :, pad:pad + d, pad:pad + h, pad:pad + w]
        if bias is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, vjp)


def bias_add(x: Tensor, v: Tensor) -> Tensor:
    """Add a per-channel vector to a feature map.

    v of shape (C,) broadcasts over batch and space; (N, C) broadcasts over
    space only (used for per-sample timestep embeddings).
    """
    if x.data.ndim < 2:
        raise DataError("bias_add expects a (N, C, ...) feature map")
    n, c = x.data.shape[:2]
    spatial_axes = tuple(range(2, x.data.ndim))
    if v.data.shape == (c,):
        vb = v.data.reshape((1, c) + (1,) * len(spatial_axes))
        def vjp(g):
            return g, g.sum(axis=(0,) + spatial_axes)
    elif v.data.shape == (n, c):
        vb = v.data.reshape((n, c) + (1,) * len(spatial_axes))
        def vjp(g):
            return g, g.sum(axis=spatial_axes)
    else:
        raise DataError(f"bias_add: vector shape {v.data.shape} fits neither ({c},) nor ({n},{c})")
    return _result(x.data + vb, (x, v), vjp)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, n_groups: int,
               eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance per (sample, channel group), then a per-channel
    affine map.  n_groups must divide the channel count."""
    if x.data.ndim < 3:
        raise DataError("group_norm expects (N, C, ...)")
    n, c = x.data.shape[:2]
    if c % n_groups != 0:
        raise DataError(f"group_norm: {n_groups} groups do not divide {c} channels")
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DataError("group_norm: gamma/beta must have shape (C,)")
    spatial = int(np.prod(x.data.shape[2:], dtype=np.int64))
    m = (c // n_groups) * spatial
    xg = x.data.reshape(n, n_groups, m)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(x.data.shape)
    gshape = (1, c) + (1,) * (x.data.ndim - 2)
    out = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

    def vjp(g):
        axes = (0,) + tuple(range(2, x.data.ndim))
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        ghat = (g * gamma.data.reshape(gshape)).reshape(n, n_groups, m)
        xh = xhat.reshape(n, n_groups, m)
        gmean = ghat.mean(axis=2, keepdims=True)
        gxmean = (ghat * xh).mean(axis=2, keepdims=True)
        dx = inv * (ghat - gmean - xh * gxmean)
        return dx.reshape(x.data.shape), dgamma, dbeta

    return _result(out, (x, gamma, beta), vjp)


def upsample_nearest3d(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbor spatial upsampling; backward sums each block."""
    if x.data.ndim != 5:
        raise DataError("upsample_nearest3d expects (N, C, D, H, W)")
    n, c, d, h, w = x.data.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3).repeat(factor, axis=4)

    def vjp(g):
        return (g.reshape(n, c, d, factor, h, factor, w, factor).sum(axis=(3, 5, 7)),)

    return _result(out, (x,), vjp)


def cross_attention(queries: Tensor, tokens: Tensor, wq: Tensor, wk: Tensor,
                    wv: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V with learned projections.

    queries: (Lq, Cq); tokens: (Lt, Ct); wq: (Cq, d); wk: (Ct, d);
    wv: (Ct, dv).  Returns (Lq, dv).  Built from recorded primitives, so the
    backward pass is the composition of their VJPs.
    """
    if wq.data.shape[1] != wk.data.shape[1]:
        raise DataError(f"cross_attention: query dim {wq.data.shape[1]} != key dim {wk.data.shape[1]}")
    head_dim = wq.data.shape[1]
    q = matmul(queries, wq)
    k = matmul(tokens, wk)
    v = matmul(tokens, wv)
    scores = scale(matmul(q, transpose_of(k)), 1.0 / np.sqrt(head_dim))
    attn = softmax(scores, axis=-1)
    return matmul(attn, v)


def transpose_of(t: Tensor) -> Tensor:
    from .core import transpose2d
    return transpose2d(t)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error (mean convention over every element)."""
    if pred.data.shape != target.data.shape:
        raise DataError(f"mse_loss: shape mismatch {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).mean())

    def vjp(g):
        base = (2.0 / n) * diff * g
        return base, -base

    return _result(out, (pred, target), vjp)


def kl_gaussian(mu: Tensor, log_var: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over elements:
    0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2)."""
    if mu.data.shape != log_var.data.shape:
        raise DataError(f"kl_gaussian: shape mismatch {mu.data.shape} vs {log_var.data.shape}")
    var = np.exp(log_var.data)
    out = np.asarray(0.5 * np.sum(mu.data ** 2 + var - 1.0 - log_var.data))

    def vjp(g):
        return g * mu.data, g * 0.5 * (var - 1.0)

    return _result(out, (mu, log_var), vjp)
