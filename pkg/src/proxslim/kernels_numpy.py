"""Pure-numpy reference implementations of the hot kernels.

Every function here mirrors a numba twin in ``kernels_numba``; the active
implementation is chosen by ``proxslim.kernels``.  Convolutions are valid
(no padding) with unit stride; padding is applied by the caller.  Loops run
over kernel offsets only, with the per-offset contraction vectorized, so
the accumulation order is fixed and results are reproducible.
"""

import numpy as np


def conv2d_fwd(x, w, b):
    """Valid cross-correlation. x: (B,Ci,H,W), w: (Co,Ci,kh,kw), b: (Co,)."""
    B, Ci, H, W = x.shape
    Co, _, kh, kw = w.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    y = np.zeros((B, Co, Ho, Wo))
    y += b[None, :, None, None]
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i : i + Ho, j : j + Wo]
            y += np.einsum("bcyx,oc->boyx", patch, w[:, :, i, j])
    return y


def conv2d_bwd_input(dy, w, H, W):
    """Gradient of conv2d_fwd with respect to x, for an (H, W) input."""
    B, Co, Ho, Wo = dy.shape
    _, Ci, kh, kw = w.shape
    dx = np.zeros((B, Ci, H, W))
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + Ho, j : j + Wo] += np.einsum(
                "boyx,oc->bcyx", dy, w[:, :, i, j]
            )
    return dx


def conv2d_bwd_weights(x, dy, kh, kw):
    """Gradients of conv2d_fwd with respect to w and b."""
    B, Ci, H, W = x.shape
    _, Co, Ho, Wo = dy.shape
    dw = np.zeros((Co, Ci, kh, kw))
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i : i + Ho, j : j + Wo]
            dw[:, :, i, j] = np.einsum("bcyx,boyx->oc", patch, dy)
    db = dy.sum(axis=(0, 2, 3))
    return dw, db


def _windows(x, p):
    B, C, H, W = x.shape
    return x.reshape(B, C, H // p, p, W // p, p).transpose(0, 1, 2, 4, 3, 5).reshape(
        B, C, H // p, W // p, p * p
    )


def softmax_pool_fwd(x, p, c):
    """Non-overlapping smooth-max pooling: sum_i x_i e^{c x_i} / sum_i e^{c x_i}."""
    win = _windows(x, p)
    m = win.max(axis=-1, keepdims=True)
    e = np.exp(c * (win - m))
    return (win * e).sum(axis=-1) / e.sum(axis=-1)


def softmax_pool_bwd(x, y, dy, p, c):
    """d pool / d x_k = p_k (1 + c (x_k - pool)) with p_k the softmax weight."""
    B, C, H, W = x.shape
    win = _windows(x, p)
    m = win.max(axis=-1, keepdims=True)
    e = np.exp(c * (win - m))
    pk = e / e.sum(axis=-1, keepdims=True)
    g = pk * (1.0 + c * (win - y[..., None])) * dy[..., None]
    Ho, Wo = H // p, W // p
    return (
        g.reshape(B, C, Ho, Wo, p, p)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(B, C, H, W)
    )


def max_pool_fwd(x, p):
    """Non-overlapping max pooling; returns values and flat argmax per window."""
    win = _windows(x, p)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx


def max_pool_bwd(dy, idx, p, H, W):
    B, C, Ho, Wo = dy.shape
    g = np.zeros((B, C, Ho, Wo, p * p))
    np.put_along_axis(g, idx[..., None], dy[..., None], axis=-1)
    return (
        g.reshape(B, C, Ho, Wo, p, p)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(B, C, H, W)
    )
