"""Patch assembly, augmentation and the training loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import ndimage

from .core import RenderedSample
from .nn.network import Network
from .nn.optim import OptimizerState, rmsprop_step
from .projection import decode_heatmaps, observation_operator, rotate_direction

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "samples_seen", "learning_rate", "loss", "val_mae")


@dataclass
class PatchTensor:
    values: np.ndarray          # (b, b, w, w, 1)
    target_normal: np.ndarray   # (3,)
    pixel: tuple[int, int] = (0, 0)


@dataclass
class AugmentConfig:
    min_lights: int = 50
    max_lights: int = 1000
    min_angle: float = 20.0
    max_angle: float = 90.0
    rotations: int = 12
    seed: int = 0

    def __post_init__(self):
        if not 3 <= self.min_lights <= self.max_lights:
            raise ValueError("need 3 <= min_lights <= max_lights")
        if not 0 < self.min_angle <= self.max_angle <= 90:
            raise ValueError("need 0 < min_angle <= max_angle <= 90")
        if self.rotations < 1:
            raise ValueError("rotations must be positive")


@dataclass
class TrainConfig:
    epochs: int = 2
    batch_size: int = 32
    validation_fraction: float = 0.10
    seed: int = 0
    patches_per_view: int = 256
    views_per_chunk: int = 4
    log_every: int = 20
    val_every: int = 200
    val_pixels: int = 256
    max_steps: int | None = None
    max_seconds: float | None = None
    learning_rate: float = 1e-3
    decay_factor: float = 0.985
    decay_samples: float = 1_000_000

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


# --------------------------------------------------------------------------
# patches

def valid_centers(mask: np.ndarray, b: int, rotatable: bool = False) -> np.ndarray:
    """``(P, 2)`` row/col of pixels whose neighbourhood lies inside ``mask``.

    With ``rotatable`` the neighbourhood is every pixel nearest to some point
    of the disk swept by the b x b window under any rotation.
    """
    h = b // 2
    if h == 0:
        return np.argwhere(mask)
    if rotatable:
        reach = h * np.sqrt(2.0) + 0.5
        r = int(np.floor(reach))
        yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
        footprint = xx * xx + yy * yy <= reach * reach
    else:
        footprint = np.ones((b, b), dtype=bool)
    inner = ndimage.binary_erosion(mask, structure=footprint, border_value=0)
    return np.argwhere(inner)


def _offsets(b: int, angle: float):
    """Row/col offsets sampled for each patch cell when the input is rotated by ``angle``.

    Rotating the image by ``angle`` about any point and reading the b x b block
    around the image of pixel ``p`` is the same as reading the original image at
    ``p + R(-angle) d`` for every block offset ``d``.
    """
    h = b // 2
    dr, dc = np.mgrid[-h:h + 1, -h:h + 1].astype(np.float64)
    dx, dy = dc, -dr
    ca, sa = np.cos(angle), np.sin(angle)
    sx = ca * dx + sa * dy
    sy = -sa * dx + ca * dy
    return -sy, sx


def _is_grid_angle(angle: float) -> bool:
    q = angle / (np.pi / 2)
    return abs(q - round(q)) < 1e-12


class PatchSource:
    """Per-scene cache for sampling (optionally rotated) patch intensities."""

    def __init__(self, sample: RenderedSample, order: int = 3):
        self.sample = sample
        self.order = order
        self.images = np.asarray(sample.images, dtype=np.float64)
        self._coeffs = None

    @property
    def coeffs(self):
        if self._coeffs is None:
            if self.order > 1:
                self._coeffs = np.stack([ndimage.spline_filter(im, order=self.order, mode="mirror")
                                         for im in self.images])
            else:
                self._coeffs = self.images
        return self._coeffs

    def intensities(self, centers: np.ndarray, b: int, angle: float = 0.0, light_idx=None) -> np.ndarray:
        """``(P, b, b, J)`` intensities around ``centers`` in the frame rotated by ``angle``."""
        centers = np.asarray(centers).reshape(-1, 2)
        light_idx = np.arange(len(self.images)) if light_idx is None else np.asarray(light_idx)
        orow, ocol = _offsets(b, angle)
        rows = centers[:, 0, None, None] + orow
        cols = centers[:, 1, None, None] + ocol
        if _is_grid_angle(angle):
            ri = np.rint(rows).astype(np.int64)
            ci = np.rint(cols).astype(np.int64)
            out = self.images[light_idx][:, ri, ci]
        else:
            coords = np.stack([rows.ravel(), cols.ravel()])
            data = self.coeffs if self.order > 1 else self.images
            out = np.stack([
                ndimage.map_coordinates(data[j], coords, order=self.order, mode="mirror", prefilter=False)
                for j in light_idx
            ]).reshape((len(light_idx),) + rows.shape)
            np.maximum(out, 0.0, out=out)
        return np.moveaxis(out, 0, -1)


def build_patches(source: PatchSource, centers, w: int, b: int, light_idx=None, angle: float = 0.0,
                  dtype=np.float32):
    """Patch tensor ``(P, b, b, w, w, 1)`` and rotated target normals ``(P, 3)``.

    The lights are rotated by ``angle`` before building the observation maps and
    the image neighbourhood is sampled in the same rotated frame.
    """
    sample = source.sample
    idx = np.arange(sample.num_lights) if light_idx is None else np.asarray(light_idx)
    dirs = rotate_direction(sample.light_dirs[idx], angle)
    A, _ = observation_operator(dirs, sample.light_intensities[idx], w)
    obs = source.intensities(centers, b, angle, idx)
    maps = (obs.reshape(-1, len(idx)) @ A).reshape(obs.shape[:3] + (w, w, 1))
    targets = None
    if sample.normals is not None:
        centers = np.asarray(centers).reshape(-1, 2)
        n = sample.normals.normals[centers[:, 0], centers[:, 1]]
        targets = rotate_direction(n, angle)
    return maps.astype(dtype, copy=False), targets


def extract_patches(sample: RenderedSample, w: int = 48, b: int = 5, lights_subset=None,
                    chunk: int = 256) -> Iterator[PatchTensor]:
    """Yield a :class:`PatchTensor` for every pixel whose b x b neighbourhood is inside the mask."""
    if b % 2 != 1:
        raise ValueError("patch size must be odd")
    source = PatchSource(sample)
    centers = valid_centers(sample.mask, b)
    for start in range(0, len(centers), chunk):
        block = centers[start:start + chunk]
        maps, targets = build_patches(source, block, w, b, lights_subset, dtype=np.float64)
        for i, (r, c) in enumerate(block):
            t = None if targets is None else targets[i]
            yield PatchTensor(maps[i], t, (int(r), int(c)))


# --------------------------------------------------------------------------
# augmentation

def lights_within(light_dirs, max_angle: float, min_lights: int = 0) -> np.ndarray:
    """Indices of lights inclined at most ``max_angle`` degrees from the view axis.

    If fewer than ``min_lights`` qualify, the ``min_lights`` least inclined are
    returned instead.
    """
    z = np.asarray(light_dirs, dtype=np.float64)[:, 2]
    incl = np.degrees(np.arccos(np.clip(z, -1.0, 1.0)))
    avail = np.flatnonzero(incl <= max_angle + 1e-9)
    if len(avail) < min_lights:
        order = np.argsort(incl, kind="stable")
        avail = np.sort(order[:min(min_lights, len(z))])
    return avail


def augment(sample: RenderedSample, cfg: AugmentConfig, draw_index: int):
    """Light subset and rotation angle for one augmented view of ``sample``.

    The maximal light inclination is drawn uniformly in ``[min_angle,
    max_angle]``; when fewer than ``min_lights`` lights survive, the
    threshold is relaxed to admit the ``min_lights`` least inclined ones. The
    kept count is uniform in ``[min_lights, min(max_lights, available)]``.
    The rotation is ``2 pi k / rotations`` with ``k = draw_index % rotations``.
    """
    n = sample.num_lights
    if n < 3:
        raise ValueError(f"only {n} lights available, at least 3 are needed")
    rng = np.random.default_rng([cfg.seed, 31, draw_index])
    threshold = rng.uniform(cfg.min_angle, cfg.max_angle)
    avail = lights_within(sample.light_dirs, threshold, cfg.min_lights)
    lo = min(cfg.min_lights, len(avail))
    hi = min(cfg.max_lights, len(avail))
    count = int(rng.integers(lo, hi + 1))
    subset = np.sort(rng.choice(avail, size=count, replace=False))
    angle = 2 * np.pi * (draw_index % cfg.rotations) / cfg.rotations
    return subset, angle


# --------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    params: dict
    best_params: dict
    best_val_mae: float
    log: list[dict] = field(default_factory=list)
    trained_scenes: set = field(default_factory=set)
    validation_scenes: list = field(default_factory=list)
    steps: int = 0
    samples_seen: int = 0


def split_scenes(n: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Scene-level train/validation partition; a pure function of ``(n, fraction, seed)``."""
    perm = np.random.default_rng([seed, 1]).permutation(n)
    n_val = 0 if n < 2 else min(n - 1, max(1, int(round(fraction * n))))
    return sorted(perm[n_val:].tolist()), sorted(perm[:n_val].tolist())


def angular_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    dots = np.clip(np.sum(pred * gt, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(dots))


def predict_normals(net: Network, patches: np.ndarray, batch_size: int = 64):
    """Decoded normals ``(P, 3)`` and validity ``(P,)`` for a patch tensor."""
    normals, valid = [], []
    for start in range(0, len(patches), batch_size):
        n, v = decode_heatmaps(net.forward(patches[start:start + batch_size]))
        normals.append(n)
        valid.append(v)
    if not normals:
        return np.zeros((0, 3)), np.zeros(0, dtype=bool)
    return np.concatenate(normals), np.concatenate(valid)


def _validation_set(sources, val_idx, cfg, acfg, w, b):
    if not val_idx:
        return None, None
    rng = np.random.default_rng([cfg.seed, 3])
    per_scene = max(1, cfg.val_pixels // len(val_idx))
    xs, ts = [], []
    for i in val_idx:
        src = sources[i]
        centers = valid_centers(src.sample.mask, b)
        if len(centers) == 0:
            continue
        pick = centers[rng.choice(len(centers), size=min(per_scene, len(centers)), replace=False)]
        n = src.sample.num_lights
        light_idx = np.arange(n) if n <= acfg.max_lights else np.sort(rng.choice(n, acfg.max_lights, replace=False))
        x, t = build_patches(src, pick, w, b, light_idx)
        xs.append(x)
        ts.append(t)
    if not xs:
        return None, None
    return np.concatenate(xs), np.concatenate(ts)


def validation_mae(net: Network, x, t, batch_size: int = 64) -> float:
    pred, valid = predict_normals(net, x, batch_size)
    err = np.where(valid, angular_errors(np.nan_to_num(pred), t), 180.0)
    return float(np.mean(err))


def train(dataset: list[RenderedSample], acfg: AugmentConfig, tcfg: TrainConfig, net: Network,
          log_path=None, on_log=None) -> TrainResult:
    """Train ``net`` in place on augmented patches drawn from ``dataset``.

    Each epoch visits every (training scene, rotation) pair once in a seeded
    random order; each visit draws a light subset and ``patches_per_view``
    random pixels. Patches from ``views_per_chunk`` visits are pooled and
    shuffled before batching.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if any(s.normals is None for s in dataset):
        raise ValueError("training samples need ground-truth normals")
    cfg = net.config
    w, b = cfg.map_size, cfg.patch_size
    sources = [PatchSource(s) for s in dataset]
    train_idx, val_idx = split_scenes(len(dataset), tcfg.validation_fraction, tcfg.seed)
    x_val, t_val = _validation_set(sources, val_idx, tcfg, acfg, w, b)
    centers = [valid_centers(s.mask, b, rotatable=True) for s in dataset]

    state = OptimizerState(learning_rate=tcfg.learning_rate, decay_factor=tcfg.decay_factor,
                           decay_samples=tcfg.decay_samples)
    result = TrainResult(params=net.params, best_params={k: v.copy() for k, v in net.params.items()},
                         best_val_mae=float("inf"),
                         validation_scenes=list(val_idx))
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)

    start = time.monotonic()
    step = 0
    window: list[float] = []

    def record(val_mae=None):
        row = {"step": step, "samples_seen": state.samples_seen, "learning_rate": state.rate(),
               "loss": float(np.mean(window)) if window else None,
               "val_mae": val_mae}
        result.log.append(row)
        if writer is not None:
            writer.writerow([row["step"], row["samples_seen"], f"{row['learning_rate']:.9g}",
                             "" if row["loss"] is None else f"{row['loss']:.9g}",
                             "" if val_mae is None else f"{val_mae:.6f}"])
            fh.flush()
        if on_log is not None:
            on_log(row)

    def validate():
        if x_val is None:
            return None
        mae = validation_mae(net, x_val, t_val)
        if mae < result.best_val_mae:
            result.best_val_mae = mae
            result.best_params = {k: v.copy() for k, v in net.params.items()}
        return mae

    def out_of_budget():
        if tcfg.max_steps is not None and step >= tcfg.max_steps:
            return True
        return tcfg.max_seconds is not None and time.monotonic() - start >= tcfg.max_seconds

    try:
        stop = False
        for epoch in range(tcfg.epochs):
            rng = np.random.default_rng([tcfg.seed, 2, epoch])
            views = [(i, k) for i in train_idx for k in range(acfg.rotations)]
            order = rng.permutation(len(views))
            pending_x, pending_t = [], []
            for pos, vi in enumerate(order):
                scene, k = views[vi]
                if not len(centers[scene]):
                    continue
                draw = (epoch * len(dataset) + scene) * acfg.rotations + k
                light_idx, angle = augment(dataset[scene], acfg, draw)
                pick = rng.choice(len(centers[scene]), size=min(tcfg.patches_per_view, len(centers[scene])),
                                  replace=False)
                x, t = build_patches(sources[scene], centers[scene][pick], w, b, light_idx, angle,
                                     dtype=net.dtype)
                result.trained_scenes.add(scene)
                pending_x.append(x)
                pending_t.append(t)
                last = pos == len(order) - 1
                if len(pending_x) < tcfg.views_per_chunk and not last:
                    continue
                xs = np.concatenate(pending_x)
                ts = np.concatenate(pending_t)
                pending_x, pending_t = [], []
                perm = rng.permutation(len(xs))
                for s0 in range(0, len(perm), tcfg.batch_size):
                    sel = perm[s0:s0 + tcfg.batch_size]
                    loss, grads = net.loss_and_grads(xs[sel], ts[sel])
                    rmsprop_step(state, net.params, grads, len(sel))
                    step += 1
                    window.append(loss)
                    if step % tcfg.val_every == 0:
                        record(validate())
                        window = []
                    elif step % tcfg.log_every == 0:
                        record()
                        window = []
                    if out_of_budget():
                        stop = True
                        break
                if stop:
                    break
            if stop:
                break
        record(validate())
    finally:
        if fh is not None:
            fh.close()

    result.params = net.params
    result.steps = step
    result.samples_seen = state.samples_seen
    if not np.isfinite(result.best_val_mae):
        result.best_params = {k: v.copy() for k, v in net.params.items()}
    return result
