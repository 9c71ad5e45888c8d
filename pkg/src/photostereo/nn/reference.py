"""Slow direct-summation references used to check the fast layers."""

from __future__ import annotations

import numpy as np


def naive_conv2d(x, w, padding="same"):
    """Loop-over-every-output cross-correlation, ``x (N, H, W, C)``, ``w (k, k, C, O)``."""
    n, h, wd, c = x.shape
    k = w.shape[0]
    p = k // 2 if padding == "same" else 0
    ho, wo = h + 2 * p - k + 1, wd + 2 * p - k + 1
    out = np.zeros((n, ho, wo, w.shape[3]))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for di in range(k):
                    for dj in range(k):
                        r, s = i + di - p, j + dj - p
                        if 0 <= r < h and 0 <= s < wd:
                            out[b, i, j] += x[b, r, s] @ w[di, dj]
    return out


def outer_kernel(photometric, spatial):
    """Dense 4D kernel ``(k, k, k, k, C, O)`` equivalent to the two separable passes.

    Axes are (spatial row, spatial col, map row, map col, in, out).
    """
    return np.einsum("rscm,pqmo->pqrsco", photometric, spatial)


def dense_conv4d(x, kernel):
    """4D convolution, ``valid`` on the patch axes and zero-padded ``same`` on the map axes."""
    b1, b2, m1, m2, _ = x.shape
    k = kernel.shape[0]
    p = kernel.shape[2] // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (0, 0)))
    o1, o2 = b1 - k + 1, b2 - k + 1
    out = np.zeros((o1, o2, m1, m2, kernel.shape[-1]))
    for a in range(k):
        for b in range(k):
            for r in range(kernel.shape[2]):
                for s in range(kernel.shape[3]):
                    block = xp[a:a + o1, b:b + o2, r:r + m1, s:s + m2, :]
                    out += block @ kernel[a, b, r, s]
    return out
