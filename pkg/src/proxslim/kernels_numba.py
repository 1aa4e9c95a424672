"""Numba-jitted twins of the kernels in ``kernels_numpy``.

Serial loops with a fixed accumulation order: no prange, no fastmath, so
results are bit-reproducible run to run.  Importing this module requires
numba; ``proxslim.kernels`` only does so when the numba backend is active.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_fwd(x, w, b):
    B, Ci, H, W = x.shape
    Co, _, kh, kw = w.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    y = np.zeros((B, Co, Ho, Wo))
    for n in range(B):
        for o in range(Co):
            base = b[o]
            for yy in range(Ho):
                for xx in range(Wo):
                    acc = base
                    for ci in range(Ci):
                        for i in range(kh):
                            for j in range(kw):
                                acc += x[n, ci, yy + i, xx + j] * w[o, ci, i, j]
                    y[n, o, yy, xx] = acc
    return y


@njit(cache=True)
def conv2d_bwd_input(dy, w, H, W):
    B, Co, Ho, Wo = dy.shape
    _, Ci, kh, kw = w.shape
    dx = np.zeros((B, Ci, H, W))
    for n in range(B):
        for o in range(Co):
            for yy in range(Ho):
                for xx in range(Wo):
                    g = dy[n, o, yy, xx]
                    for ci in range(Ci):
                        for i in range(kh):
                            for j in range(kw):
                                dx[n, ci, yy + i, xx + j] += g * w[o, ci, i, j]
    return dx


@njit(cache=True)
def conv2d_bwd_weights(x, dy, kh, kw):
    B, Ci, H, W = x.shape
    _, Co, Ho, Wo = dy.shape
    dw = np.zeros((Co, Ci, kh, kw))
    db = np.zeros(Co)
    for n in range(B):
        for o in range(Co):
            for yy in range(Ho):
                for xx in range(Wo):
                    g = dy[n, o, yy, xx]
                    db[o] += g
                    for ci in range(Ci):
                        for i in range(kh):
                            for j in range(kw):
                                dw[o, ci, i, j] += g * x[n, ci, yy + i, xx + j]
    return dw, db


@njit(cache=True)
def softmax_pool_fwd(x, p, c):
    B, C, H, W = x.shape
    Ho, Wo = H // p, W // p
    y = np.zeros((B, C, Ho, Wo))
    for n in range(B):
        for ch in range(C):
            for yy in range(Ho):
                for xx in range(Wo):
                    m = x[n, ch, yy * p, xx * p]
                    for i in range(p):
                        for j in range(p):
                            v = x[n, ch, yy * p + i, xx * p + j]
                            if v > m:
                                m = v
                    num = 0.0
                    den = 0.0
                    for i in range(p):
                        for j in range(p):
                            v = x[n, ch, yy * p + i, xx * p + j]
                            e = np.exp(c * (v - m))
                            num += v * e
                            den += e
                    y[n, ch, yy, xx] = num / den
    return y


@njit(cache=True)
def softmax_pool_bwd(x, y, dy, p, c):
    B, C, H, W = x.shape
    Ho, Wo = H // p, W // p
    dx = np.zeros((B, C, H, W))
    for n in range(B):
        for ch in range(C):
            for yy in range(Ho):
                for xx in range(Wo):
                    m = x[n, ch, yy * p, xx * p]
                    for i in range(p):
                        for j in range(p):
                            v = x[n, ch, yy * p + i, xx * p + j]
                            if v > m:
                                m = v
                    den = 0.0
                    for i in range(p):
                        for j in range(p):
                            den += np.exp(c * (x[n, ch, yy * p + i, xx * p + j] - m))
                    s = y[n, ch, yy, xx]
                    g = dy[n, ch, yy, xx]
                    for i in range(p):
                        for j in range(p):
                            v = x[n, ch, yy * p + i, xx * p + j]
                            pk = np.exp(c * (v - m)) / den
                            dx[n, ch, yy * p + i, xx * p + j] = (
                                g * pk * (1.0 + c * (v - s))
                            )
    return dx


@njit(cache=True)
def max_pool_fwd(x, p):
    B, C, H, W = x.shape
    Ho, Wo = H // p, W // p
    y = np.zeros((B, C, Ho, Wo))
    idx = np.zeros((B, C, Ho, Wo), dtype=np.int64)
    for n in range(B):
        for ch in range(C):
            for yy in range(Ho):
                for xx in range(Wo):
                    best = x[n, ch, yy * p, xx * p]
                    k = 0
                    for i in range(p):
                        for j in range(p):
                            v = x[n, ch, yy * p + i, xx * p + j]
                            if v > best:
                                best = v
                                k = i * p + j
                    y[n, ch, yy, xx] = best
                    idx[n, ch, yy, xx] = k
    return y, idx


@njit(cache=True)
def max_pool_bwd(dy, idx, p, H, W):
    B, C, Ho, Wo = dy.shape
    dx = np.zeros((B, C, H, W))
    for n in range(B):
        for ch in range(C):
            for yy in range(Ho):
                for xx in range(Wo):
                    k = idx[n, ch, yy, xx]
                    dx[n, ch, yy * p + k // p, xx * p + k % p] += dy[n, ch, yy, xx]
    return dx
