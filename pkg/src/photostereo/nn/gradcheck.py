"""Finite-difference and adjoint (dot-product) checks for every layer and the network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .network import Network, NetworkConfig, mse_heatmap_loss

FD_STEP = 1e-4
FD_TOL = 1e-4
ADJOINT_TOL = 1e-10

SMALL_CONFIG = NetworkConfig(blocks=2, base_features=2, patch_size=5, map_size=8, kernel=3)


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tol)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<40s} err={self.error:.3e} tol={self.tol:.0e}"


def rel_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def numerical_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x``, perturbed in place."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def adjoint_error(apply, adjoint, x, y) -> float:
    """``|<A x, y> - <x, A^T y>|`` relative to the size of the terms."""
    lhs = float(np.vdot(apply(x), y))
    rhs = float(np.vdot(x, adjoint(y)))
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale


def _layer_cases(rng):
    """``(name, forward(x, w), backward(dout, x, w) -> (dx, dw), x, w)`` for each weighted op."""
    def conv(padding):
        def fwd(x, w):
            return L.conv2d_forward(x, w, padding)[0]

        def bwd(d, x, w):
            return L.conv2d_backward(d, w, L.conv2d_forward(x, w, padding)[1])
        return fwd, bwd

    def wrap(f, b):
        def fwd(x, w):
            return f(x, w)[0]

        def bwd(d, x, w):
            return b(d, w, f(x, w)[1])
        return fwd, bwd

    cases = []
    for padding in ("same", "valid"):
        fwd, bwd = conv(padding)
        cases.append((f"conv2d[{padding}]", fwd, bwd,
                      rng.standard_normal((2, 6, 5, 3)), rng.standard_normal((3, 3, 3, 4))))
        # enough channels to take the shifted-product path
        cases.append((f"conv2d[{padding}, wide]", fwd, bwd,
                      rng.standard_normal((2, 5, 6, 5)), rng.standard_normal((3, 3, 5, 2))))
    fwd, bwd = wrap(L.photometric_conv_forward, L.photometric_conv_backward)
    cases.append(("photometric_conv", fwd, bwd,
                  rng.standard_normal((2, 3, 3, 6, 6, 2)), rng.standard_normal((3, 3, 2, 3))))
    cases.append(("photometric_conv[wide]", fwd, bwd,
                  rng.standard_normal((1, 3, 3, 5, 5, 4)), rng.standard_normal((3, 3, 4, 2))))
    fwd, bwd = wrap(L.spatial_conv_forward, L.spatial_conv_backward)
    cases.append(("spatial_conv", fwd, bwd,
                  rng.standard_normal((2, 5, 5, 4, 4, 2)), rng.standard_normal((3, 3, 2, 3))))
    fwd, bwd = wrap(L.transposed_conv2_forward, L.transposed_conv2_backward)
    cases.append(("transposed_conv2", fwd, bwd,
                  rng.standard_normal((2, 3, 4, 3)), rng.standard_normal((2, 2, 3, 2))))
    return cases


def layer_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fwd, bwd, x, w in _layer_cases(rng):
        y = fwd(x, w)
        dy = rng.standard_normal(y.shape)
        dx, dw = bwd(dy, x, w)
        results.append(CheckResult(f"{name} adjoint (input)",
                                   adjoint_error(lambda v: fwd(v, w), lambda u: bwd(u, x, w)[0], x, dy),
                                   ADJOINT_TOL))
        results.append(CheckResult(f"{name} adjoint (kernel)",
                                   adjoint_error(lambda v: fwd(x, v), lambda u: bwd(u, x, w)[1], w, dy),
                                   ADJOINT_TOL))
        loss = lambda: float(np.vdot(fwd(x, w), dy))  # noqa: E731
        results.append(CheckResult(f"{name} finite-diff (input)", rel_error(dx, numerical_grad(loss, x)), FD_TOL))
        results.append(CheckResult(f"{name} finite-diff (kernel)", rel_error(dw, numerical_grad(loss, w)), FD_TOL))

    # piecewise-linear layers: the adjoint is taken at a fixed activation pattern
    x = rng.standard_normal((2, 4, 6, 3))
    y, cache = L.maxpool2_forward(x)
    dy = rng.standard_normal(y.shape)

    def pool_fixed(v):
        arg, _ = cache
        n, h, w, c = v.shape
        blocks = v.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    results.append(CheckResult("maxpool2 adjoint",
                               adjoint_error(pool_fixed, lambda u: L.maxpool2_backward(u, cache), x, dy),
                               ADJOINT_TOL))
    results.append(CheckResult("maxpool2 finite-diff",
                               rel_error(L.maxpool2_backward(dy, cache),
                                         numerical_grad(lambda: float(np.vdot(L.maxpool2_forward(x)[0], dy)), x)),
                               FD_TOL))
    x = rng.standard_normal((3, 5))
    x[np.abs(x) < 1e-2] = 0.5
    y, mask = L.relu_forward(x)
    dy = rng.standard_normal(y.shape)
    results.append(CheckResult("relu adjoint",
                               adjoint_error(lambda v: v * mask, lambda u: L.relu_backward(u, mask), x, dy),
                               ADJOINT_TOL))
    results.append(CheckResult("relu finite-diff",
                               rel_error(L.relu_backward(dy, mask),
                                         numerical_grad(lambda: float(np.vdot(L.relu_forward(x)[0], dy)), x)),
                               FD_TOL))
    a, b = rng.standard_normal((2, 3, 3, 2)), rng.standard_normal((2, 3, 3, 4))
    y, split = L.concat_skip_forward(a, b)
    dy = rng.standard_normal(y.shape)
    da, db = L.concat_skip_backward(dy, split)
    err = abs(np.vdot(y, dy) - np.vdot(a, da) - np.vdot(b, db)) / abs(np.vdot(y, dy))
    results.append(CheckResult("concat_skip adjoint", float(err), ADJOINT_TOL))
    return results


def network_checks(seed: int = 0, config: NetworkConfig = SMALL_CONFIG) -> list[CheckResult]:
    """Finite-difference check of every parameter tensor of a small float64 network."""
    rng = np.random.default_rng(seed)
    net = Network(config, seed=seed, dtype=np.float64)
    b, w = config.patch_size, config.map_size
    x = np.abs(rng.standard_normal((2, b, b, w, w, 1)))
    z = rng.uniform(0.6, 1.0, 2)
    phi = rng.uniform(0, 2 * np.pi, 2)
    r = np.sqrt(1 - z * z)
    target = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)

    _, grads = net.loss_and_grads(x, target)
    base = _activation_pattern(net)
    results = []

    def probe():
        value = mse_heatmap_loss(net.forward(x), target)
        return value, _activation_pattern(net) == base

    for name in sorted(net.params):
        num, smooth = _fd_on_smooth_entries(probe, net.params[name])
        results.append(CheckResult(f"network finite-diff [{name}]",
                                   rel_error(grads[name][smooth], num[smooth]), FD_TOL))

    net.forward(x)
    net.backward(mse_heatmap_loss(net.forward(x), target, with_grad=True)[1])
    dx = net.input_grad
    num, smooth = _fd_on_smooth_entries(probe, x)
    results.append(CheckResult("network finite-diff [input]", rel_error(dx[smooth], num[smooth]), FD_TOL))
    return results


def _activation_pattern(net: Network) -> bytes:
    """Fingerprint of every ReLU mask and max-pool choice of the last forward pass."""
    parts = []
    for layer in net.layers():
        if isinstance(layer, L.ReLU):
            parts.append(np.packbits(layer.cache).tobytes())
        elif isinstance(layer, L.MaxPool2):
            parts.append(layer.cache[0].astype(np.uint8).tobytes())
    return b"".join(parts)


def _fd_on_smooth_entries(probe, x: np.ndarray, h: float = FD_STEP):
    """Central differences, flagging entries whose perturbation crosses a ReLU/max-pool kink.

    The network is piecewise smooth; at entries where the activation pattern
    changes within the step the derivative is not defined by the formula
    being checked, so those entries are excluded.
    """
    g = np.zeros_like(x, dtype=np.float64)
    smooth = np.ones(x.shape, dtype=bool)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp, okp = probe()
        x[i] = old - h
        fm, okm = probe()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
        smooth[i] = okp and okm
    return g, smooth


def sepconv_dense_check(seed: int = 0, shape=(5, 5, 8, 8, 2), cmid: int = 3, cout: int = 2) -> CheckResult:
    """Compare :func:`layers.sepconv4d` to a direct dense 4D convolution."""
    from .reference import dense_conv4d, outer_kernel

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    wp = rng.standard_normal((3, 3, shape[-1], cmid))
    ws = rng.standard_normal((3, 3, cmid, cout))
    fast = L.sepconv4d(x, wp, ws)
    dense = dense_conv4d(x, outer_kernel(wp, ws))
    return CheckResult("sepconv4d vs dense 4D", float(np.max(np.abs(fast - dense))), ADJOINT_TOL)


def run_all(seed: int = 0) -> list[CheckResult]:
    return layer_checks(seed) + [sepconv_dense_check(seed)] + network_checks(seed)
