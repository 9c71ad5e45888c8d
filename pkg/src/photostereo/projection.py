"""Geometry between the light/normal hemisphere and the ``w x w`` map plane.

A direction ``l = (x, y, z)`` with ``z >= 0`` projects orthographically to
continuous map coordinates ``(u, v) = (w (x + 1) / 2, w (y + 1) / 2)``.
Observation maps and heat-maps are indexed ``map[u, v]``: the first array
axis follows the x component, the second the y component.

All functions broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .core import GeometryError, LightSource, stack_lights

DEFAULT_MAP_SIZE = 48
DEFAULT_SIGMA = 2.0
DECODE_RADIUS = 2  # 5x5 window
_HEMISPHERE_TOL = 1e-12

INTERPOLATION_ORDER = {"nearest": 0, "bilinear": 1, "spline": 3}


def _check_hemisphere(l: np.ndarray) -> None:
    if np.any(l[..., 2] < -_HEMISPHERE_TOL):
        raise GeometryError("direction lies behind the camera plane (z < 0)")


def project_direction(l, w: int = DEFAULT_MAP_SIZE) -> np.ndarray:
    """Continuous map coordinates ``(..., 2)`` of unit directions ``(..., 3)``."""
    l = np.asarray(l, dtype=np.float64)
    _check_hemisphere(l)
    return w * (l[..., :2] + 1.0) / 2.0


def map_index(c, w: int = DEFAULT_MAP_SIZE) -> np.ndarray:
    """Nearest cell of continuous coordinates; halves round away from zero, then clamp to ``[0, w-1]``."""
    c = np.asarray(c, dtype=np.float64)
    idx = np.sign(c) * np.floor(np.abs(c) + 0.5)
    return np.clip(idx, 0, w - 1).astype(np.int64)


def unproject(c, w: int = DEFAULT_MAP_SIZE) -> np.ndarray:
    """Inverse of :func:`project_direction`; points outside the unit disk go to the rim."""
    c = np.asarray(c, dtype=np.float64)
    xy = 2.0 * c / w - 1.0
    r2 = np.sum(xy * xy, axis=-1, keepdims=True)
    outside = r2 > 1.0
    xy = np.where(outside, xy / np.sqrt(np.where(outside, r2, 1.0)), xy)
    z = np.sqrt(np.maximum(0.0, 1.0 - np.sum(xy * xy, axis=-1, keepdims=True)))
    return np.concatenate([xy, z], axis=-1)


def rotate_direction(l, angle: float) -> np.ndarray:
    """Rotate directions about the view axis (+z) by ``angle`` radians, counter-clockwise."""
    l = np.asarray(l, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    x, y = l[..., 0], l[..., 1]
    return np.stack([c * x - s * y, s * x + c * y, l[..., 2]], axis=-1)


# --------------------------------------------------------------------------
# observation maps

@dataclass
class ObservationMap:
    values: np.ndarray
    hit_count: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[0]


def observation_operator(light_dirs, light_intensities, w: int = DEFAULT_MAP_SIZE):
    """Linear operator taking per-light intensities to flattened observation maps.

    Returns ``(A, counts)`` where ``A`` has shape ``(J, w*w)`` so that
    ``intensities @ A`` gives the averaged, intensity-normalized maps and
    ``counts`` is the flat hit count per cell.
    """
    dirs = np.asarray(light_dirs, dtype=np.float64).reshape(-1, 3)
    ints = np.asarray(light_intensities, dtype=np.float64).reshape(-1)
    if len(dirs) == 0:
        raise ValueError("at least one light is required")
    if np.any(ints <= 0):
        raise GeometryError("light intensities must be positive")
    ij = map_index(project_direction(dirs, w), w)
    flat = ij[:, 0] * w + ij[:, 1]
    counts = np.bincount(flat, minlength=w * w)
    A = np.zeros((len(dirs), w * w))
    A[np.arange(len(dirs)), flat] = 1.0 / (ints * counts[flat])
    return A, counts


def observation_maps(intensities, light_dirs, light_intensities, w: int = DEFAULT_MAP_SIZE) -> np.ndarray:
    """Batch of observation maps ``(..., w, w)`` from intensities ``(..., J)``."""
    intensities = np.asarray(intensities, dtype=np.float64)
    A, _ = observation_operator(light_dirs, light_intensities, w)
    out = intensities @ A
    return out.reshape(intensities.shape[:-1] + (w, w))


def build_observation_map(observations, lights, w: int = DEFAULT_MAP_SIZE) -> ObservationMap:
    """Observation map of a single pixel.

    ``lights`` is a list of :class:`LightSource` or a ``(directions, intensities)``
    pair. Several lights landing in one cell are averaged.
    """
    obs = np.asarray(observations, dtype=np.float64).reshape(-1)
    if isinstance(lights, tuple) and len(lights) == 2 and not isinstance(lights[0], LightSource):
        dirs, ints = np.asarray(lights[0]), np.asarray(lights[1])
    else:
        dirs, ints = stack_lights(lights)
    if obs.size == 0:
        raise ValueError("no observations given")
    if len(dirs) != obs.size:
        raise ValueError(f"{obs.size} observations but {len(dirs)} lights")
    if np.any(obs < 0) or not np.all(np.isfinite(obs)):
        raise ValueError("observations must be finite and non-negative")
    A, counts = observation_operator(dirs, ints, w)
    return ObservationMap(values=(obs @ A).reshape(w, w), hit_count=counts.reshape(w, w))


# --------------------------------------------------------------------------
# heat-maps

def encode_heatmap(n, w: int = DEFAULT_MAP_SIZE, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Gaussian heat-map(s) ``(..., w, w)`` centred on the projection of ``n``.

    The normalizer is ``2*pi*sigma`` (not ``2*pi*sigma**2``); targets are
    rescaled during training and decoding ignores scale.
    """
    n = np.asarray(n, dtype=np.float64)
    c = project_direction(n, w)
    grid = np.arange(w, dtype=np.float64)
    gx = np.exp(-((grid - c[..., 0:1]) ** 2) / (2 * sigma**2))
    gy = np.exp(-((grid - c[..., 1:2]) ** 2) / (2 * sigma**2))
    return gx[..., :, None] * gy[..., None, :] / (2 * np.pi * sigma)


def _reflect(idx: np.ndarray, w: int) -> np.ndarray:
    # edge-inclusive mirror, like np.pad(mode="symmetric")
    period = 2 * w
    idx = np.mod(idx, period)
    return np.where(idx >= w, period - 1 - idx, idx)


@lru_cache(maxsize=256)
def _centroid_table(w: int, sigma: float, left: int, right: int):
    """Window centroid as a function of the true sub-cell offset, for an ideal Gaussian.

    ``left``/``right`` are the distances (capped at the radius) from the peak
    cell to the map borders; they determine which window cells are mirrored.
    """
    k = np.arange(-DECODE_RADIUS, DECODE_RADIUS + 1)
    i = left if left < DECODE_RADIUS else (w - 1 - right if right < DECODE_RADIUS else w // 2)
    rel = _reflect(i + k, w) - i
    offsets = np.linspace(-DECODE_RADIUS, DECODE_RADIUS, 4001)
    weights = np.exp(-((rel[None, :] - offsets[:, None]) ** 2) / (2 * sigma**2))
    centroid = weights @ k / weights.sum(axis=1)
    # keep only the strictly increasing part so the inverse is well defined
    keep = np.concatenate([[True], np.diff(centroid) > 0])
    return centroid[keep], offsets[keep]


def _debias(raw: np.ndarray, peak: np.ndarray, w: int, sigma: float) -> np.ndarray:
    out = np.empty_like(raw)
    left = np.minimum(peak, DECODE_RADIUS)
    right = np.minimum(w - 1 - peak, DECODE_RADIUS)
    for a, b in set(zip(left.tolist(), right.tolist())):
        sel = (left == a) & (right == b)
        cen, off = _centroid_table(w, float(sigma), a, b)
        out[sel] = np.interp(raw[sel], cen, off)
    return out


def decode_heatmaps(M, sigma: float = DEFAULT_SIGMA, debias: bool = True):
    """Decode a batch of heat-maps ``(N, w, w)`` into unit normals.

    Returns ``(normals (N, 3), valid (N,))``; maps without a positive value are
    flagged invalid and get a NaN normal.

    The refined peak is the centre of mass of the 5x5 window around the
    argmax (mirrored at borders, negatives clamped). A plain centre of mass
    of a sigma=2 Gaussian over 5x5 cells is pulled towards the cell centre by
    up to ~0.3 cells, so by default the per-axis centroid is mapped back
    through the window's exact response to a Gaussian of width ``sigma``.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 2:
        M = M[None]
    n, w, _ = M.shape
    flat = M.reshape(n, -1)
    arg = np.argmax(flat, axis=1)
    valid = flat[np.arange(n), arg] > 0
    pi, pj = np.divmod(arg, w)

    k = np.arange(-DECODE_RADIUS, DECODE_RADIUS + 1)
    rows = _reflect(pi[:, None] + k, w)
    cols = _reflect(pj[:, None] + k, w)
    win = M[np.arange(n)[:, None, None], rows[:, :, None], cols[:, None, :]]
    win = np.maximum(win, 0.0)
    mass = win.sum(axis=(1, 2))
    safe = np.where(mass > 0, mass, 1.0)
    ox = win.sum(axis=2) @ k / safe
    oy = win.sum(axis=1) @ k / safe
    if debias:
        ox = _debias(ox, pi, w, sigma)
        oy = _debias(oy, pj, w, sigma)
    coords = np.clip(np.stack([pi + ox, pj + oy], axis=-1), 0.0, w)
    normals = unproject(coords, w)
    valid &= mass > 0
    normals[~valid] = np.nan
    return normals, valid


def decode_heatmap(M, sigma: float = DEFAULT_SIGMA, debias: bool = True) -> np.ndarray:
    """Unit normal encoded by a single ``(w, w)`` heat-map."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square heat-map, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("heat-map contains non-finite values")
    normals, valid = decode_heatmaps(M[None], sigma, debias)
    if not valid[0]:
        raise ValueError("heat-map has no positive peak")
    return normals[0]


# --------------------------------------------------------------------------
# spatial rotation

def rotate_field(image, angle: float, interpolation: str = "spline", normals: bool = False) -> np.ndarray:
    """Rotate an ``(H, W)`` or ``(H, W, C)`` array counter-clockwise about its centre.

    Rows run along -y and columns along +x, so a positive angle turns the
    picture the same way :func:`rotate_direction` turns vectors. Samples from
    outside the array are zero. With ``normals=True`` the array must be
    ``(H, W, 3)`` and every vector is rotated as well.
    """
    image = np.asarray(image)
    if np.mod(angle, 2 * np.pi) == 0.0:
        return image.copy()
    try:
        order = INTERPOLATION_ORDER[interpolation]
    except KeyError:
        raise ValueError(f"unknown interpolation {interpolation!r}") from None
    h, w = image.shape[:2]
    rc, cc = (h - 1) / 2.0, (w - 1) / 2.0
    r, c = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    x, y = c - cc, rc - r
    ca, sa = np.cos(angle), np.sin(angle)
    xs = ca * x + sa * y
    ys = -sa * x + ca * y
    coords = np.stack([rc - ys, cc + xs])

    data = image.astype(np.float64)
    if data.ndim == 2:
        out = ndimage.map_coordinates(data, coords, order=order, mode="constant", cval=0.0)
    else:
        out = np.stack(
            [ndimage.map_coordinates(data[..., ch], coords, order=order, mode="constant", cval=0.0)
             for ch in range(data.shape[2])],
            axis=-1,
        )
    if normals:
        if out.ndim != 3 or out.shape[2] != 3:
            raise ValueError("normal fields must be (H, W, 3)")
        out = rotate_direction(out, angle)
    return out.astype(image.dtype, copy=False) if np.issubdtype(image.dtype, np.floating) else out


def rotate_map(M, angle: float, interpolation: str = "bilinear") -> np.ndarray:
    """Rotate a ``(..., w, w)`` observation map or heat-map about the map centre.

    Cell ``(i, j)`` sits at map coordinate ``(u, v) = (i, j)`` and the
    rotation is taken about ``(w/2, w/2)``, the image of the view axis, so that
    rotating a map matches rotating the directions it was built from.
    """
    M = np.asarray(M, dtype=np.float64)
    try:
        order = INTERPOLATION_ORDER[interpolation]
    except KeyError:
        raise ValueError(f"unknown interpolation {interpolation!r}") from None
    w = M.shape[-1]
    if M.shape[-2] != w:
        raise ValueError(f"maps must be square, got {M.shape[-2:]}")
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    ca, sa = np.cos(angle), np.sin(angle)
    du, dv = u - w / 2.0, v - w / 2.0
    coords = np.stack([w / 2.0 + ca * du + sa * dv, w / 2.0 - sa * du + ca * dv])
    flat = M.reshape(-1, w, w)
    out = np.stack([ndimage.map_coordinates(m, coords, order=order, mode="constant", cval=0.0) for m in flat])
    return out.reshape(M.shape)


def rotate_mask(mask, angle: float) -> np.ndarray:
    """Nearest-neighbour rotation of a boolean mask."""
    return rotate_field(np.asarray(mask, dtype=np.float64), angle, "nearest") > 0.5
