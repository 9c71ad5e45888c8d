"""Bias-free layers with explicit forward/backward passes.

Tensors are numpy arrays in channels-last layout: 2D feature maps are
``(N, H, W, C)`` and patch tensors are ``(N, b, b, w, w, C)`` with the two
spatial (patch) axes first and the two photometric (map) axes next.
Convolution kernels are ``(k, k, C_in, C_out)``.

Each functional ``*_forward`` returns ``(out, cache)``; the matching
``*_backward`` takes ``(dout, cache)`` and returns the input gradient and,
where applicable, the kernel gradient.
"""

from __future__ import annotations

import numpy as np


def _pad_for(k: int, padding: str) -> int:
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {k}")
    if padding == "same":
        return k // 2
    if padding == "valid":
        return 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


_IM2COL_MAX_CHANNELS = 3


def conv2d_forward(x, w, padding="same"):
    """Cross-correlation of ``x (N, H, W, C)`` with ``w (k, k, C, O)``; no bias.

    Few input channels use an explicit im2col matrix; otherwise the kernel is
    applied as a sum of ``k*k`` shifted ``C x O`` products.
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[0] != w.shape[1] or x.shape[3] != w.shape[2]:
        raise ValueError(f"shape mismatch: input {x.shape}, kernel {w.shape}")
    k = w.shape[0]
    p = _pad_for(k, padding)
    n, h, wd, c = x.shape
    ho, wo = h + 2 * p - k + 1, wd + 2 * p - k + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {k} larger than input {h}x{wd}")
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    if k == 1:
        return x @ w[0, 0], (x, x.shape, k, p, False)
    if c <= _IM2COL_MAX_CHANNELS:
        cols = np.concatenate(
            [xp[:, i:i + ho, j:j + wo, :] for i in range(k) for j in range(k)], axis=-1
        )
        return cols @ w.reshape(k * k * c, -1), (cols, x.shape, k, p, True)
    out = np.zeros((n, ho, wo, w.shape[3]), dtype=np.result_type(x, w))
    for i in range(k):
        for j in range(k):
            out += xp[:, i:i + ho, j:j + wo, :] @ w[i, j]
    return out, (xp, x.shape, k, p, False)


def conv2d_backward(dout, w, cache):
    saved, xshape, k, p, im2col = cache
    n, h, wd, c = xshape
    o = w.shape[3]
    d2 = dout.reshape(-1, o)
    if k == 1:
        return dout @ w[0, 0].T, (saved.reshape(-1, c).T @ d2).reshape(w.shape)
    ho, wo = dout.shape[1:3]
    dxp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=dout.dtype)
    if im2col:
        kkc = k * k * c
        dw = (saved.reshape(-1, kkc).T @ d2).reshape(w.shape)
        dcols = dout @ w.reshape(kkc, o).T
        idx = 0
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + ho, j:j + wo, :] += dcols[..., idx * c:(idx + 1) * c]
                idx += 1
    else:
        dw = np.empty(w.shape, dtype=np.result_type(saved, dout))
        for i in range(k):
            for j in range(k):
                xs = np.ascontiguousarray(saved[:, i:i + ho, j:j + wo, :]).reshape(-1, c)
                dw[i, j] = xs.T @ d2
                dxp[:, i:i + ho, j:j + wo, :] += dout @ w[i, j].T
    dx = dxp[:, p:p + h, p:p + wd, :] if p else dxp
    return dx, dw


def conv2d(x, w, padding="same"):
    return conv2d_forward(x, w, padding)[0]


# -- separable 4D convolution ----------------------------------------------

def photometric_conv_forward(x, w):
    """``same`` convolution over the map axes of ``x (N, b, b, w, w, C)``."""
    n, b1, b2, m1, m2, c = x.shape
    y, cache = conv2d_forward(x.reshape(n * b1 * b2, m1, m2, c), w, "same")
    return y.reshape(n, b1, b2, m1, m2, -1), (cache, x.shape)


def photometric_conv_backward(dout, w, cache):
    inner, xshape = cache
    n, b1, b2, m1, m2, o = dout.shape
    dx, dw = conv2d_backward(dout.reshape(n * b1 * b2, m1, m2, o), w, inner)
    return dx.reshape(xshape), dw


def spatial_conv_forward(x, w):
    """``valid`` convolution over the patch axes of ``x (N, b, b, w, w, C)``."""
    k = w.shape[0]
    if x.ndim != 6 or w.shape[0] != w.shape[1] or x.shape[5] != w.shape[2]:
        raise ValueError(f"shape mismatch: input {x.shape}, kernel {w.shape}")
    _pad_for(k, "valid")
    n, b1, b2, m1, m2, c = x.shape
    o1, o2 = b1 - k + 1, b2 - k + 1
    if o1 < 1 or o2 < 1:
        raise ValueError(f"kernel {k} larger than patch {b1}x{b2}")
    out = np.zeros((n, o1, o2, m1, m2, w.shape[3]), dtype=np.result_type(x, w))
    for p in range(k):
        for q in range(k):
            out += x[:, p:p + o1, q:q + o2] @ w[p, q]
    return out, x


def spatial_conv_backward(dout, w, x):
    k = w.shape[0]
    c, o = w.shape[2], w.shape[3]
    o1, o2 = dout.shape[1:3]
    d2 = dout.reshape(-1, o)
    dx = np.zeros(x.shape, dtype=dout.dtype)
    dw = np.empty(w.shape, dtype=np.result_type(x, dout))
    for p in range(k):
        for q in range(k):
            xs = np.ascontiguousarray(x[:, p:p + o1, q:q + o2]).reshape(-1, c)
            dw[p, q] = xs.T @ d2
            dx[:, p:p + o1, q:q + o2] += dout @ w[p, q].T
    return dx, dw


def sepconv4d(x, photometric_weights, spatial_weights):
    """Separable 4D convolution: photometric ``same`` pass, then spatial ``valid`` pass.

    ``x`` is ``(b, b, w, w, C)`` or batched ``(N, b, b, w, w, C)``.
    """
    x = np.asarray(x)
    single = x.ndim == 5
    if single:
        x = x[None]
    if x.ndim != 6:
        raise ValueError(f"expected a 5D patch tensor, got shape {x.shape}")
    if x.shape[1] < spatial_weights.shape[0] or x.shape[2] < spatial_weights.shape[0]:
        raise ValueError("patch smaller than the spatial kernel")
    y, _ = photometric_conv_forward(x, photometric_weights)
    y, _ = spatial_conv_forward(y, spatial_weights)
    return y[0] if single else y


# -- pooling, upsampling, activations ----------------------------------------

def maxpool2_forward(x):
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even extents, got {h}x{w}")
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    arg = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def maxpool2_backward(dout, cache):
    arg, xshape = cache
    n, h, w, c = xshape
    onehot = np.zeros(dout.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(onehot, arg[..., None], dout[..., None], axis=-1)
    return onehot.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(xshape)


def transposed_conv2_forward(x, w):
    """Stride-2, kernel-2 transposed convolution; ``w`` is ``(2, 2, C_in, C_out)``."""
    n, h, wd, c = x.shape
    if w.shape[:3] != (2, 2, c):
        raise ValueError(f"shape mismatch: input {x.shape}, kernel {w.shape}")
    o = w.shape[3]
    y = x.reshape(-1, c) @ w.transpose(2, 0, 1, 3).reshape(c, 4 * o)
    y = y.reshape(n, h, wd, 2, 2, o).transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * h, 2 * wd, o)
    return y, x


def transposed_conv2_backward(dout, w, x):
    n, h, wd, c = x.shape
    o = w.shape[3]
    d = dout.reshape(n, h, 2, wd, 2, o).transpose(0, 1, 3, 2, 4, 5).reshape(-1, 4 * o)
    wm = w.transpose(2, 0, 1, 3).reshape(c, 4 * o)
    dx = (d @ wm.T).reshape(x.shape)
    dw = (x.reshape(-1, c).T @ d).reshape(c, 2, 2, o).transpose(1, 2, 0, 3)
    return dx, dw


def upsample_nearest2(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def concat_skip_forward(decoder, encoder):
    if decoder.shape[:-1] != encoder.shape[:-1]:
        raise ValueError(f"cannot concatenate {decoder.shape} and {encoder.shape}")
    return np.concatenate([decoder, encoder], axis=-1), decoder.shape[-1]


def concat_skip_backward(dout, split):
    return dout[..., :split], dout[..., split:]


# -- layer objects used by the network -----------------------------------------

class Layer:
    """A stateful wrapper that caches its forward inputs for one backward pass."""

    param: str | None = None

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, dout, params, grads):
        raise NotImplementedError


class _Weighted(Layer):
    def __init__(self, name, shape):
        self.param = name
        self.shape = tuple(shape)
        self.cache = None

    @property
    def fan_in(self) -> int:
        return int(np.prod(self.shape[:-1]))

    def _accumulate(self, grads, dw):
        if self.param in grads:
            grads[self.param] += dw
        else:
            grads[self.param] = dw


class Conv2D(_Weighted):
    def __init__(self, name, cin, cout, k=3):
        super().__init__(name, (k, k, cin, cout))

    def forward(self, x, params):
        y, self.cache = conv2d_forward(x, params[self.param], "same")
        return y

    def backward(self, dout, params, grads):
        dx, dw = conv2d_backward(dout, params[self.param], self.cache)
        self._accumulate(grads, dw)
        return dx


class PhotometricConv(_Weighted):
    def __init__(self, name, cin, cout, k=3):
        super().__init__(name, (k, k, cin, cout))

    def forward(self, x, params):
        y, self.cache = photometric_conv_forward(x, params[self.param])
        return y

    def backward(self, dout, params, grads):
        dx, dw = photometric_conv_backward(dout, params[self.param], self.cache)
        self._accumulate(grads, dw)
        return dx


class SpatialConv(_Weighted):
    def __init__(self, name, cin, cout, k=3):
        super().__init__(name, (k, k, cin, cout))

    def forward(self, x, params):
        y, self.cache = spatial_conv_forward(x, params[self.param])
        return y

    def backward(self, dout, params, grads):
        dx, dw = spatial_conv_backward(dout, params[self.param], self.cache)
        self._accumulate(grads, dw)
        return dx


class TransposedConv2(_Weighted):
    def __init__(self, name, cin, cout):
        super().__init__(name, (2, 2, cin, cout))

    @property
    def fan_in(self) -> int:
        return self.shape[2]

    def forward(self, x, params):
        y, self.cache = transposed_conv2_forward(x, params[self.param])
        return y

    def backward(self, dout, params, grads):
        dx, dw = transposed_conv2_backward(dout, params[self.param], self.cache)
        self._accumulate(grads, dw)
        return dx


class ReLU(Layer):
    def forward(self, x, params):
        y, self.cache = relu_forward(x)
        return y

    def backward(self, dout, params, grads):
        return relu_backward(dout, self.cache)


class MaxPool2(Layer):
    def forward(self, x, params):
        y, self.cache = maxpool2_forward(x)
        return y

    def backward(self, dout, params, grads):
        return maxpool2_backward(dout, self.cache)


class Squeeze(Layer):
    """``(N, 1, 1, w, w, C) -> (N, w, w, C)``."""

    def forward(self, x, params):
        if x.shape[1:3] != (1, 1):
            raise ValueError(f"spatial axes must be reduced to 1x1 before squeezing, got {x.shape}")
        self.cache = x.shape
        return x.reshape(x.shape[0], *x.shape[3:])

    def backward(self, dout, params, grads):
        return dout.reshape(self.cache)


def run_forward(layers, x, params):
    for layer in layers:
        x = layer.forward(x, params)
    return x


def run_backward(layers, dout, params, grads):
    for layer in reversed(layers):
        dout = layer.backward(dout, params, grads)
    return dout
