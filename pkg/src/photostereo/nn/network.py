"""Bias-free spatio-photometric U-Net regressing Gaussian heat-maps.

Layout for the default configuration (B=3, 16 features, b=5, w=48):

    patch (N, 5, 5, 48, 48, 1)
      -> [photometric conv same, ReLU, spatial conv valid, ReLU] x 2   (5x5 -> 3x3 -> 1x1)
      -> squeeze                                                        (N, 48, 48, 16)
      -> encoder: B blocks of 2 convs + ReLU, max-pool after each       16, 32, 64
      -> bottleneck: 2 convs + ReLU                                     128
      -> decoder: B blocks of transposed conv + ReLU, concat skip,
         2 convs + ReLU                                                  64, 32, 16
      -> final conv to one channel, no activation                      (N, 48, 48)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..projection import encode_heatmap
from . import layers as L

TARGET_SCALE = 100.0


@dataclass(frozen=True)
class NetworkConfig:
    blocks: int = 3
    base_features: int = 16
    patch_size: int = 5
    map_size: int = 48
    kernel: int = 3
    inner_relu: bool = True

    def __post_init__(self):
        if self.blocks < 1 or self.base_features < 1:
            raise ValueError("blocks and base_features must be positive")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise ValueError("kernel size must be odd")
        if self.patch_size % 2 != 1:
            raise ValueError("patch size must be odd")
        if self.map_size % (2**self.blocks):
            raise ValueError(f"map size {self.map_size} not divisible by 2^{self.blocks}")
        if self.kernel > 1 and (self.patch_size - 1) % (self.kernel - 1):
            raise ValueError("patch size cannot be reduced to 1x1 with this kernel")

    @property
    def spatial_stages(self) -> int:
        if self.kernel == 1:
            return 1 if self.patch_size == 1 else 0
        return (self.patch_size - 1) // (self.kernel - 1)

    def as_dict(self) -> dict:
        return asdict(self)


class Network:
    """Parameters plus the layer graph; ``forward`` caches what ``backward`` needs."""

    def __init__(self, config: NetworkConfig | None = None, seed: int | None = 0,
                 dtype=np.float32, params: dict | None = None):
        self.config = config or NetworkConfig()
        self.dtype = np.dtype(dtype)
        self._build()
        if params is None:
            self.params = self.init_params(seed)
        else:
            self.load_params(params)

    # -- construction --------------------------------------------------------

    def _build(self):
        cfg = self.config
        k, f = cfg.kernel, cfg.base_features
        front = []
        cin = 1
        stages = max(cfg.spatial_stages, 1)
        for s in range(stages):
            front.append(L.PhotometricConv(f"sep{s}_photometric", cin, f, k))
            if cfg.inner_relu:
                front.append(L.ReLU())
            if cfg.spatial_stages:
                front.append(L.SpatialConv(f"sep{s}_spatial", f, f, k))
            front.append(L.ReLU())
            cin = f
        front.append(L.Squeeze())
        self.front = front

        self.encoder, self.pools = [], []
        cin = f
        for b in range(cfg.blocks):
            width = f * 2**b
            self.encoder.append([
                L.Conv2D(f"enc{b}_conv0", cin, width, k), L.ReLU(),
                L.Conv2D(f"enc{b}_conv1", width, width, k), L.ReLU(),
            ])
            self.pools.append(L.MaxPool2())
            cin = width
        width = f * 2**cfg.blocks
        self.bottleneck = [
            L.Conv2D("mid_conv0", cin, width, k), L.ReLU(),
            L.Conv2D("mid_conv1", width, width, k), L.ReLU(),
        ]
        cin = width
        self.up, self.decoder = [], []
        for b in reversed(range(cfg.blocks)):
            width = f * 2**b
            self.up.append([L.TransposedConv2(f"dec{b}_up", cin, width), L.ReLU()])
            self.decoder.append([
                L.Conv2D(f"dec{b}_conv0", 2 * width, width, k), L.ReLU(),
                L.Conv2D(f"dec{b}_conv1", width, width, k), L.ReLU(),
            ])
            cin = width
        self.head = [L.Conv2D("out_conv", cin, 1, k)]

    def layers(self):
        yield from self.front
        for block, pool in zip(self.encoder, self.pools):
            yield from block
            yield pool
        yield from self.bottleneck
        for up, dec in zip(self.up, self.decoder):
            yield from up
            yield from dec
        yield from self.head

    def weighted_layers(self):
        return [layer for layer in self.layers() if layer.param is not None]

    def param_shapes(self) -> dict[str, tuple]:
        return {layer.param: layer.shape for layer in self.weighted_layers()}

    def init_params(self, seed=None) -> dict[str, np.ndarray]:
        """Fan-in variance scaling (He normal); the final layer uses unit gain."""
        rng = np.random.default_rng(seed)
        params = {}
        weighted = self.weighted_layers()
        for layer in weighted:
            gain = 1.0 if layer is weighted[-1] else 2.0
            std = np.sqrt(gain / layer.fan_in)
            params[layer.param] = (rng.standard_normal(layer.shape) * std).astype(self.dtype)
        return params

    def load_params(self, params: dict):
        shapes = self.param_shapes()
        if set(params) != set(shapes):
            missing = set(shapes) - set(params)
            extra = set(params) - set(shapes)
            raise ValueError(f"parameter mismatch; missing {sorted(missing)}, unexpected {sorted(extra)}")
        out = {}
        for name, shape in shapes.items():
            p = np.asarray(params[name])
            if p.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {p.shape}")
            out[name] = p.astype(self.dtype, copy=True)
        self.params = out

    @property
    def num_params(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def macs(self) -> int:
        """Multiply-accumulates for one patch."""
        cfg = self.config
        b, w, k, f = cfg.patch_size, cfg.map_size, cfg.kernel, cfg.base_features
        total = 0
        side = b
        for layer in self.front:
            if isinstance(layer, L.PhotometricConv):
                total += side * side * w * w * int(np.prod(layer.shape))
            elif isinstance(layer, L.SpatialConv):
                side = side - k + 1
                total += side * side * w * w * int(np.prod(layer.shape))
        size = w
        for block in self.encoder:
            total += sum(size * size * int(np.prod(l.shape)) for l in block if l.param)
            size //= 2
        total += sum(size * size * int(np.prod(l.shape)) for l in self.bottleneck if l.param)
        for up, dec in zip(self.up, self.decoder):
            total += size * size * int(np.prod(up[0].shape))
            size *= 2
            total += sum(size * size * int(np.prod(l.shape)) for l in dec if l.param)
        total += size * size * int(np.prod(self.head[0].shape))
        return total

    # -- passes ----------------------------------------------------------------

    def _check_input(self, x):
        cfg = self.config
        want = (cfg.patch_size, cfg.patch_size, cfg.map_size, cfg.map_size, 1)
        if x.shape[1:] != want:
            raise ValueError(f"expected patches of shape (N,) + {want}, got {x.shape}")

    def forward(self, x) -> np.ndarray:
        """Heat-maps ``(N, w, w)`` for patches ``(N, b, b, w, w, 1)``; a single patch gives ``(w, w)``."""
        x = np.asarray(x)
        single = x.ndim == 5
        if single:
            x = x[None]
        self._check_input(x)
        p = self.params
        h = L.run_forward(self.front, x.astype(self.dtype, copy=False), p)
        skips = []
        for block, pool in zip(self.encoder, self.pools):
            h = L.run_forward(block, h, p)
            skips.append(h)
            h = pool.forward(h, p)
        h = L.run_forward(self.bottleneck, h, p)
        self._splits = []
        for up, dec, skip in zip(self.up, self.decoder, reversed(skips)):
            h = L.run_forward(up, h, p)
            h, split = L.concat_skip_forward(h, skip)
            self._splits.append(split)
            h = L.run_forward(dec, h, p)
        out = L.run_forward(self.head, h, p)[..., 0]
        return out[0] if single else out

    def backward(self, dout) -> dict[str, np.ndarray]:
        """Parameter gradients for upstream gradient ``dout (N, w, w)`` of the last forward call."""
        p = self.params
        grads: dict[str, np.ndarray] = {}
        d = L.run_backward(self.head, np.asarray(dout, dtype=self.dtype)[..., None], p, grads)
        dskips = []
        for up, dec, split in zip(reversed(self.up), reversed(self.decoder), reversed(self._splits)):
            d = L.run_backward(dec, d, p, grads)
            d, dskip = L.concat_skip_backward(d, split)
            dskips.append(dskip)
            d = L.run_backward(up, d, p, grads)
        d = L.run_backward(self.bottleneck, d, p, grads)
        for block, pool, dskip in zip(reversed(self.encoder), reversed(self.pools), reversed(dskips)):
            d = pool.backward(d, p, grads) + dskip
            d = L.run_backward(block, d, p, grads)
        self.input_grad = L.run_backward(self.front, d, p, grads)
        return grads

    def loss_and_grads(self, x, target_normals, loss_scale: float = 1.0):
        pred = self.forward(x)
        if pred.ndim == 2:
            pred = pred[None]
        loss, dpred = mse_heatmap_loss(pred, target_normals, with_grad=True)
        grads = self.backward(dpred * loss_scale)
        return loss * loss_scale, grads


def mse_heatmap_loss(pred, target_normals, sigma: float = 2.0, with_grad: bool = False):
    """Mean squared error between predicted heat-maps and ``100 x`` the target Gaussians.

    ``pred`` is ``(N, w, w)`` (or ``(w, w)``), ``target_normals`` ``(N, 3)``.
    """
    pred = np.asarray(pred)
    if pred.ndim == 2:
        pred = pred[None]
    target = np.asarray(target_normals, dtype=np.float64).reshape(-1, 3)
    if len(target) != len(pred):
        raise ValueError("one target normal per predicted map is required")
    w = pred.shape[-1]
    diff = pred.astype(np.float64) - TARGET_SCALE * encode_heatmap(target, w, sigma)
    loss = float(np.mean(diff * diff))
    if not with_grad:
        return loss
    return loss, (2.0 / diff.size) * diff
