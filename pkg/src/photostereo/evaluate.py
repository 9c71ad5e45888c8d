"""Rotation-averaged inference and mean-angular-error scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import NormalMap, RenderedSample, normalize
from .nn.network import Network
from .pipeline import PatchSource, build_patches, predict_normals, valid_centers
from .projection import INTERPOLATION_ORDER, rotate_direction

DEGENERATE_LENGTH = 1e-6


def angular_error(a, b) -> np.ndarray:
    """Angle in degrees between unit vectors (broadcasts over leading axes)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dots = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(dots))


def average_normals(stack: np.ndarray, valid: np.ndarray | None = None):
    """Average ``(K, P, 3)`` unit normals over K and renormalize.

    Returns ``(normals (P, 3), ok (P,))``; pixels whose mean is shorter than
    1e-6 (or with no valid member) are not ok.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if valid is None:
        valid = np.ones(stack.shape[:2], dtype=bool)
    total = np.where(valid[..., None], np.nan_to_num(stack), 0.0).sum(axis=0)
    count = valid.sum(axis=0)
    mean = total / np.maximum(count, 1)[:, None]
    length = np.linalg.norm(mean, axis=-1)
    ok = (count > 0) & (length >= DEGENERATE_LENGTH)
    out = np.where(ok[:, None], mean / np.where(ok, length, 1.0)[:, None], 0.0)
    return out, ok


def infer(net: Network, sample: RenderedSample, k_test: int = 12, pixels=None, batch_size: int = 64,
          interpolation: str = "spline", chunk: int = 1024) -> NormalMap:
    """Normal map predicted with ``k_test`` rotations of the input, averaged.

    For rotation ``k`` the lights are rotated by ``2 pi k / k_test`` before the
    observation maps are built, the image neighbourhood is read in the same
    rotated frame, and each decoded normal is rotated back by the same angle.
    Only pixels whose rotated neighbourhood stays inside the mask are
    predicted; ``pixels`` optionally restricts this further to given ``(row,
    col)`` positions.
    """
    if k_test < 1:
        raise ValueError("k_test must be positive")
    cfg = net.config
    h, w = sample.mask.shape
    centers = valid_centers(sample.mask, cfg.patch_size, rotatable=True)
    if pixels is not None:
        wanted = np.zeros((h, w), dtype=bool)
        pixels = np.asarray(pixels).reshape(-1, 2)
        wanted[pixels[:, 0], pixels[:, 1]] = True
        centers = centers[wanted[centers[:, 0], centers[:, 1]]]
    normals = np.zeros((h, w, 3))
    mask = np.zeros((h, w), dtype=bool)
    if len(centers) == 0:
        return NormalMap(normals, mask)

    source = PatchSource(sample, order=INTERPOLATION_ORDER[interpolation])
    for start in range(0, len(centers), chunk):
        block = centers[start:start + chunk]
        preds = np.empty((k_test, len(block), 3))
        valid = np.empty((k_test, len(block)), dtype=bool)
        for k in range(k_test):
            angle = 2 * np.pi * k / k_test
            x, _ = build_patches(source, block, cfg.map_size, cfg.patch_size, angle=angle, dtype=net.dtype)
            n, ok = predict_normals(net, x, batch_size)
            preds[k] = rotate_direction(np.nan_to_num(n), -angle)
            valid[k] = ok
        avg, ok = average_normals(preds, valid)
        normals[block[:, 0], block[:, 1]] = avg
        mask[block[:, 0], block[:, 1]] = ok
    return NormalMap(normals, mask)


@dataclass
class EvalReport:
    per_object: dict[str, float]
    mean: float
    error_maps: dict[str, np.ndarray] = field(default_factory=dict)

    def table(self, method: str = "Ours") -> str:
        names = list(self.per_object)
        cols = names + ["Average"]
        width = max(8, *(len(c) for c in cols))
        head = f"{'Method':<12s}" + "".join(f"{c:>{width + 2}s}" for c in cols)
        vals = [self.per_object[n] for n in names] + [self.mean]
        row = f"{method:<12s}" + "".join(f"{v:>{width + 2}.2f}" for v in vals)
        return head + "\n" + row + "\n"


def _error_map(pred: NormalMap, gt: NormalMap) -> np.ndarray:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    both = pred.mask & gt.mask
    if not both.any():
        raise ValueError("prediction and ground truth masks do not overlap")
    err = np.full(both.shape, np.nan)
    # stored maps are float32, so renormalize before taking angles
    err[both] = angular_error(normalize(pred.normals[both]), normalize(gt.normals[both]))
    return err


def score(pred: NormalMap, gt: NormalMap, name: str = "object") -> EvalReport:
    """Mean angular error over the intersection of the two masks."""
    err = _error_map(pred, gt)
    mae = float(np.nanmean(err))
    return EvalReport({name: mae}, mae, {name: err})


def score_many(pairs) -> EvalReport:
    """Aggregate ``(name, pred, gt)`` triples; the average is the unweighted mean of per-object means."""
    per, maps = {}, {}
    for name, pred, gt in pairs:
        err = _error_map(pred, gt)
        per[name] = float(np.nanmean(err))
        maps[name] = err
    if not per:
        raise ValueError("nothing to score")
    return EvalReport(per, float(np.mean(list(per.values()))), maps)


def error_image(err: np.ndarray) -> np.ndarray:
    """8-bit grayscale rendering of an error map: 0..90 degrees mapped linearly to 0..255."""
    e = np.nan_to_num(np.asarray(err, dtype=np.float64), nan=0.0)
    return np.rint(np.clip(e, 0.0, 90.0) / 90.0 * 255.0).astype(np.uint8)
