"""Synthetic photometric-stereo scenes with analytic ground truth.

Orthographic camera looking down -z (view direction ``[0, 0, 1]``),
directional lights, attached shadows only (no cast shadows or
inter-reflections). Reflectance is Lambertian plus an optional Blinn lobe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import LightSource, NormalMap, RenderedSample, make_lights, normalize, stack_lights

SURFACES = ("sphere", "plane", "bumps")
VIEW = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Specular:
    strength: float = 0.5
    exponent: float = 20.0

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("specular strength must lie in [0, 1]")
        if self.exponent < 1.0:
            raise ValueError("specular exponent must be >= 1")


@dataclass
class SceneSpec:
    """Description of a synthetic scene.

    ``albedo`` is a scalar or an ``(H, W)`` field in (0, 1]. For the
    ``bumps`` surface, ``num_bumps`` Gaussian bumps with random signed
    heights and widths are placed using ``seed``; ``bump_height`` is the
    peak height relative to the bump width, which controls the slopes.
    """

    surface: str = "sphere"
    resolution: tuple[int, int] = (65, 65)
    albedo: float | np.ndarray = 1.0
    specular: Specular | None = None
    noise_std: float = 0.0
    seed: int = 0
    sphere_radius: float | None = None
    num_bumps: int = 12
    bump_height: float = 1.0
    bump_width: tuple[float, float] = (0.06, 0.16)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.surface not in SURFACES:
            raise ValueError(f"surface must be one of {SURFACES}")
        h, w = self.resolution
        if h <= 0 or w <= 0:
            raise ValueError("resolution must be positive")
        a = np.asarray(self.albedo, dtype=np.float64)
        if a.ndim not in (0, 2) or (a.ndim == 2 and a.shape != (h, w)):
            raise ValueError("albedo must be a scalar or an (H, W) field")
        if np.any(a <= 0) or np.any(a > 1):
            raise ValueError("albedo must lie in (0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def sample_hemisphere_lights(count: int, max_inclination: float = 90.0, seed=None,
                             intensity: float = 1.0) -> list[LightSource]:
    """Directions uniform by solid angle on the cap within ``max_inclination`` degrees of +z."""
    if count < 1:
        raise ValueError("count must be positive")
    if not 0 < max_inclination <= 90:
        raise ValueError("max_inclination must lie in (0, 90]")
    rng = np.random.default_rng(seed)
    zmin = np.cos(np.radians(max_inclination))
    z = rng.uniform(zmin, 1.0, count)
    phi = rng.uniform(0.0, 2 * np.pi, count)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return make_lights(normalize(dirs), intensity)


def _pixel_coords(h: int, w: int):
    """Pixel-centre coordinates ``(x, y)`` relative to the image centre, y pointing up."""
    r, c = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return c - (w - 1) / 2.0, (h - 1) / 2.0 - r


def bump_parameters(spec: SceneSpec) -> np.ndarray:
    """Rows of ``(cx, cy, height, width)`` in pixel units for the bump field."""
    h, w = spec.resolution
    rng = np.random.default_rng([spec.seed, 7919])
    size = min(h, w)
    widths = rng.uniform(*spec.bump_width, spec.num_bumps) * size
    heights = rng.choice([-1.0, 1.0], spec.num_bumps) * rng.uniform(0.5, 1.0, spec.num_bumps)
    heights *= spec.bump_height * widths
    cx = rng.uniform(-0.5, 0.5, spec.num_bumps) * w
    cy = rng.uniform(-0.5, 0.5, spec.num_bumps) * h
    return np.stack([cx, cy, heights, widths], axis=1)


def bump_height(spec: SceneSpec, x, y) -> np.ndarray:
    """Height of the bump field at arbitrary ``(x, y)`` (centre-relative, y up)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.zeros(np.broadcast(x, y).shape)
    for cx, cy, a, s in bump_parameters(spec):
        z += a * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
    return z


def bump_gradient(spec: SceneSpec, x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    gx = np.zeros(np.broadcast(x, y).shape)
    gy = np.zeros_like(gx)
    for cx, cy, a, s in bump_parameters(spec):
        g = a * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
        gx -= g * (x - cx) / (s * s)
        gy -= g * (y - cy) / (s * s)
    return gx, gy


def surface_normals(spec: SceneSpec) -> NormalMap:
    h, w = spec.resolution
    x, y = _pixel_coords(h, w)
    if spec.surface == "plane":
        n = np.zeros((h, w, 3))
        n[..., 2] = 1.0
        return NormalMap(n, np.ones((h, w), dtype=bool))
    if spec.surface == "sphere":
        radius = spec.sphere_radius or 0.45 * min(h, w)
        nx, ny = x / radius, y / radius
        r2 = nx * nx + ny * ny
        mask = r2 < 1.0
        nz = np.sqrt(np.maximum(0.0, 1.0 - r2))
        n = np.stack([nx, ny, nz], axis=-1)
        n[~mask] = 0.0
        return NormalMap(n, mask)
    gx, gy = bump_gradient(spec, x, y)
    n = normalize(np.stack([-gx, -gy, np.ones_like(gx)], axis=-1))
    return NormalMap(n, np.ones((h, w), dtype=bool))


def render_lambertian(normals: NormalMap, albedo, light: LightSource) -> np.ndarray:
    """``L * albedo * max(n . l, 0)`` per pixel, zero outside the mask."""
    shade = np.maximum(normals.normals @ light.direction, 0.0)
    out = light.intensity * np.asarray(albedo, dtype=np.float64) * shade
    return np.where(normals.mask, out, 0.0)


def shade(normals: np.ndarray, albedo, light_dirs, light_intensities,
          specular: Specular | None = None) -> np.ndarray:
    """Noise-free radiance ``(J, P)`` for normals ``(P, 3)`` under ``J`` lights."""
    dirs = np.asarray(light_dirs, dtype=np.float64)
    ints = np.asarray(light_intensities, dtype=np.float64)
    cos = dirs @ normals.T
    lit = cos > 0
    out = ints[:, None] * np.asarray(albedo, dtype=np.float64) * np.where(lit, cos, 0.0)
    if specular is not None and specular.strength > 0:
        half = normalize(dirs + VIEW)
        hn = np.maximum(half @ normals.T, 0.0)
        out += np.where(lit, specular.strength * ints[:, None] * hn**specular.exponent, 0.0)
    return out


def render_scene(spec: SceneSpec, lights) -> RenderedSample:
    """Render ``spec`` under ``lights`` (list of :class:`LightSource`)."""
    dirs, ints = stack_lights(lights)
    if len(dirs) == 0:
        raise ValueError("at least one light is required")
    h, w = spec.resolution
    nm = surface_normals(spec)
    albedo = np.broadcast_to(np.asarray(spec.albedo, dtype=np.float64), (h, w))
    m = nm.mask
    images = np.zeros((len(dirs), h, w))
    images[:, m] = shade(nm.normals[m], albedo[m], dirs, ints, spec.specular)
    if spec.noise_std > 0:
        rng = np.random.default_rng([spec.seed, 104729])
        images[:, m] += rng.normal(0.0, spec.noise_std, images[:, m].shape)
        np.maximum(images, 0.0, out=images)
    return RenderedSample(images=images, light_dirs=dirs, light_intensities=ints, mask=m,
                          normals=nm, name=f"{spec.surface}-{spec.seed}")


def smooth_albedo(shape, seed=None, low: float = 0.3, high: float = 1.0, scale: float = 0.15) -> np.ndarray:
    """Random spatially smooth albedo field in ``[low, high]``."""
    rng = np.random.default_rng(seed)
    field_ = ndimage.gaussian_filter(rng.normal(size=shape), sigma=scale * min(shape))
    field_ -= field_.min()
    field_ /= max(field_.max(), 1e-12)
    return low + (high - low) * field_
