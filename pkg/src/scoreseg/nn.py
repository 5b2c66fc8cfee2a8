"""Channels-last layer primitives with hand-written backward passes.

Activations are ``(B, H, W, C)`` arrays. Every ``*_backward`` returns the
gradient with respect to the layer input first, followed by parameter
gradients where the layer has any.
"""
from __future__ import annotations

import numpy as np


def conv3x3(x, w, b, stride=1):
    """3x3 convolution with zero padding 1; ``w`` has shape (3, 3, C_in, C_out).

    stride 2 halves the spatial size (H, W must be even).
    """
    B, H, W, _ = x.shape
    if stride == 2 and (H % 2 or W % 2):
        raise ValueError(f"stride-2 convolution needs even spatial size, got {H}x{W}")
    Ho, Wo = H // stride, W // stride
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.empty((B, Ho, Wo, w.shape[3]), dtype=x.dtype)
    out[...] = b
    for i in range(3):
        for j in range(3):
            out += xp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride, :] @ w[i, j]
    return out, xp


def conv3x3_backward(dout, xp, w, stride=1, need_dx=True):
    B, Ho, Wo, O = dout.shape
    C = w.shape[2]
    dw = np.empty_like(w)
    d2 = dout.reshape(-1, O)
    for i in range(3):
        for j in range(3):
            sl = (slice(None), slice(i, i + stride * Ho, stride), slice(j, j + stride * Wo, stride))
            dw[i, j] = xp[sl].reshape(-1, C).T @ d2
    db = d2.sum(axis=0)
    dx = None
    if need_dx and stride == 1:
        # transpose of a stride-1 conv is a conv with flipped, transposed taps
        w_t = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
        dx, _ = conv3x3(dout, w_t, np.zeros(C, dtype=dout.dtype))
    elif need_dx:
        dxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                sl = (slice(None), slice(i, i + stride * Ho, stride), slice(j, j + stride * Wo, stride))
                dxp[sl] += dout @ w[i, j].T
        dx = dxp[:, 1:-1, 1:-1, :]
    return dx, dw, db


def silu(x):
    # exp overflow for very negative x gives s = 0, the correct limit
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x))
    return x * s, s


def silu_backward(dout, x, s):
    return dout * s * (1.0 + x * (1.0 - s))


def upsample2(x):
    """Nearest-neighbour 2x upsampling."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dout):
    B, H, W, C = dout.shape
    return dout.reshape(B, H // 2, 2, W // 2, 2, C).sum(axis=(2, 4))


def film(h, scale, shift):
    """Per-item, per-channel affine modulation ``h * (1 + scale) + shift``."""
    return h * (1.0 + scale[:, None, None, :]) + shift[:, None, None, :]


def film_backward(dout, h, scale):
    dh = dout * (1.0 + scale[:, None, None, :])
    dscale = np.einsum("bhwc,bhwc->bc", dout, h)
    dshift = dout.sum(axis=(1, 2))
    return dh, dscale, dshift
