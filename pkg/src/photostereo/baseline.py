"""Classical Lambertian least-squares photometric stereo."""

from __future__ import annotations

import numpy as np

from .core import GeometryError, NormalMap, RenderedSample

DEFAULT_SHADOW_THRESHOLD = 0.1
_RANK_TOL = 1e-10


class DegenerateGeometryError(GeometryError):
    """The active lights do not span three dimensions."""


def light_matrix(light_dirs, light_intensities) -> np.ndarray:
    """Rows ``L_j * l_j`` so that ``I = light_matrix @ (albedo * n)`` for a Lambertian pixel."""
    dirs = np.asarray(light_dirs, dtype=np.float64).reshape(-1, 3)
    return dirs * np.asarray(light_intensities, dtype=np.float64).reshape(-1, 1)


def _finish(g: np.ndarray):
    albedo = np.linalg.norm(g, axis=-1)
    safe = np.where(albedo > 0, albedo, 1.0)[..., None]
    n = np.where(albedo[..., None] > 0, g / safe, np.array([0.0, 0.0, 1.0]))
    n = np.where(n[..., 2:3] < 0, -n, n)
    return n, albedo


def solve_pixel(light_mat, observations):
    """Least-squares normal and albedo of one pixel.

    Solved through the SVD of ``light_mat`` rather than the normal equations.
    """
    S = np.asarray(light_mat, dtype=np.float64)
    b = np.asarray(observations, dtype=np.float64).reshape(-1)
    if S.ndim != 2 or S.shape[1] != 3 or len(S) != len(b):
        raise ValueError("light matrix must be (J, 3) matching the observations")
    if len(b) < 3:
        raise DegenerateGeometryError("at least three observations are needed")
    U, s, Vt = np.linalg.svd(S, full_matrices=False)
    if s[-1] <= _RANK_TOL * max(s[0], 1e-300):
        raise DegenerateGeometryError("light directions are coplanar or repeated")
    g = Vt.T @ ((U.T @ b) / s)
    n, albedo = _finish(g)
    return n, float(albedo)


def solve_batch(light_mat, observations, weights=None):
    """Vectorized least squares over pixels.

    ``observations`` is ``(P, J)``; ``weights`` an optional ``(P, J)`` 0/1 array
    selecting the observations used per pixel. Returns ``(normals, albedo,
    valid)``; rank-deficient pixels are invalid.
    """
    S = np.asarray(light_mat, dtype=np.float64)
    b = np.asarray(observations, dtype=np.float64)
    if weights is None:
        U, s, Vt = np.linalg.svd(S, full_matrices=False)
        ok = s[-1] > _RANK_TOL * s[0]
        g = ((b @ U) / s) @ Vt
        valid = np.full(len(b), ok)
    else:
        A = weights[:, :, None] * S[None]
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        valid = s[:, -1] > _RANK_TOL * np.maximum(s[:, 0], 1e-300)
        s_inv = np.where(valid[:, None], 1.0 / np.where(s > 0, s, 1.0), 0.0)
        coef = np.einsum("pjk,pj->pk", U, weights * b) * s_inv
        g = np.einsum("pk,pkc->pc", coef, Vt)
    n, albedo = _finish(g)
    return n, albedo, valid


def solve_map(sample: RenderedSample, shadow_threshold: float = DEFAULT_SHADOW_THRESHOLD,
              chunk: int = 4096) -> NormalMap:
    """Per-pixel least squares over a whole image stack.

    Zero observations, and those darker than ``shadow_threshold`` times the
    pixel's brightest observation, are discarded; if fewer than three remain,
    all are used.
    """
    if not 0.0 <= shadow_threshold < 1.0:
        raise ValueError("shadow_threshold must lie in [0, 1)")
    if sample.num_lights < 3:
        raise DegenerateGeometryError("at least three lights are needed")
    S = light_matrix(sample.light_dirs, sample.light_intensities)
    h, w = sample.mask.shape
    pix = np.flatnonzero(sample.mask)
    obs = sample.images.reshape(sample.num_lights, -1)[:, pix].T.astype(np.float64)

    normals = np.zeros((h * w, 3))
    valid = np.zeros(h * w, dtype=bool)
    for start in range(0, len(pix), chunk):
        b = obs[start:start + chunk]
        # zero readings are clipped by the attached-shadow max, not linear data
        keep = (b > 0) & (b >= shadow_threshold * b.max(axis=1, keepdims=True))
        keep[keep.sum(axis=1) < 3] = True
        if keep.all():
            n, _, ok = solve_batch(S, b)
        else:
            n, _, ok = solve_batch(S, b, keep.astype(np.float64))
        idx = pix[start:start + chunk]
        normals[idx] = n
        valid[idx] = ok
    normals[~valid] = 0.0
    return NormalMap(normals.reshape(h, w, 3), valid.reshape(h, w))
