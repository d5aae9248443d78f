"""Fused batch-norm kernels. Optional: falls back to plain numpy when numba is absent.

The kernels stream each [n, w] activation matrix once or twice instead of the
half-dozen passes the numpy formulation needs; on the toy workloads this is
the difference between gemm-bound and dispatch-bound training steps.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def bn_forward_train(h, scale, shift, eps):
    n, w = h.shape
    mu = np.zeros(w)
    for i in range(n):
        for j in range(w):
            mu[j] += h[i, j]
    for j in range(w):
        mu[j] /= n
    var = np.zeros(w)
    centered = np.empty((n, w))
    for i in range(n):
        for j in range(w):
            c = h[i, j] - mu[j]
            centered[i, j] = c
            var[j] += c * c
    inv = np.empty(w)
    gain = np.empty(w)
    for j in range(w):
        var[j] /= n
        inv[j] = 1.0 / np.sqrt(var[j] + eps)
        gain[j] = scale[j] * inv[j]
    out = np.empty((n, w))
    for i in range(n):
        for j in range(w):
            out[i, j] = centered[i, j] * gain[j] + shift[j]
    return out, centered, inv, mu, var


@njit(cache=True)
def bn_backward_train(d_out, centered, inv, scale, d_scale, d_shift):
    n, w = d_out.shape
    s1 = np.zeros(w)
    s2 = np.zeros(w)
    for i in range(n):
        for j in range(w):
            s1[j] += d_out[i, j]
            s2[j] += d_out[i, j] * centered[i, j]
    for j in range(w):
        s2[j] /= n
        d_scale[j] += n * inv[j] * s2[j]
        d_shift[j] += s1[j]
        s1[j] /= n
    g = np.empty(w)
    sub = np.empty(w)
    curve = np.empty(w)
    for j in range(w):
        g[j] = scale[j] * inv[j]
        sub[j] = g[j] * s1[j]
        curve[j] = g[j] * inv[j] * inv[j] * s2[j]
    dx = np.empty((n, w))
    for i in range(n):
        for j in range(w):
            dx[i, j] = d_out[i, j] * g[j] - sub[j] - centered[i, j] * curve[j]
    return dx


@njit(cache=True)
def relu_mask(h):
    n, w = h.shape
    mask = np.empty((n, w), dtype=np.bool_)
    for i in range(n):
        for j in range(w):
            if h[i, j] > 0.0:
                mask[i, j] = True
            else:
                h[i, j] = 0.0
                mask[i, j] = False
    return mask


@njit(cache=True)
def apply_mask(d_h, mask):
    n, w = d_h.shape
    for i in range(n):
        for j in range(w):
            if not mask[i, j]:
                d_h[i, j] = 0.0
