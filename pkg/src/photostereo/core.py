"""Shared containers: light sources, normal maps and rendered samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-6


class GeometryError(ValueError):
    """Input violates a geometric precondition (off-hemisphere, not unit, degenerate)."""


def as_unit(v, tol: float = 1e-9) -> np.ndarray:
    """Return ``v`` as a float array, raising if any vector is not unit length."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise GeometryError(f"expected 3-vectors, got shape {v.shape}")
    norms = np.linalg.norm(v, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= tol):
        raise GeometryError("vectors must have unit length")
    return v


def normalize(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


@dataclass(frozen=True)
class LightSource:
    """A directional light: unit direction towards the light and a positive intensity."""

    direction: np.ndarray
    intensity: float = 1.0

    def __post_init__(self):
        d = as_unit(self.direction)
        if d.shape != (3,):
            raise GeometryError("light direction must be a single 3-vector")
        if not self.intensity > 0:
            raise GeometryError("light intensity must be positive")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "intensity", float(self.intensity))


def stack_lights(lights) -> tuple[np.ndarray, np.ndarray]:
    """Split a list of :class:`LightSource` into ``(J, 3)`` directions and ``(J,)`` intensities."""
    lights = list(lights)
    if not lights:
        return np.zeros((0, 3)), np.zeros(0)
    dirs = np.stack([l.direction for l in lights])
    ints = np.array([l.intensity for l in lights], dtype=np.float64)
    return dirs, ints


def make_lights(directions, intensities=None) -> list[LightSource]:
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if intensities is None:
        intensities = np.ones(len(directions))
    intensities = np.broadcast_to(np.asarray(intensities, dtype=np.float64), (len(directions),))
    return [LightSource(d, float(i)) for d, i in zip(directions, intensities)]


@dataclass
class NormalMap:
    """Per-pixel normals ``(H, W, 3)`` with a boolean validity mask ``(H, W)``.

    Normals follow the image frame used throughout the package: +x points
    along increasing column index, +y points up (decreasing row index) and
    +z points towards the camera.
    """

    normals: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.normals = np.asarray(self.normals, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.normals.ndim != 3 or self.normals.shape[2] != 3:
            raise ValueError(f"normals must be (H, W, 3), got {self.normals.shape}")
        if self.mask.shape != self.normals.shape[:2]:
            raise ValueError("mask shape must match the normal map")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def validate(self, tol: float = UNIT_TOL) -> None:
        n = np.linalg.norm(self.normals[self.mask], axis=-1)
        if n.size and np.max(np.abs(n - 1.0)) > tol:
            raise GeometryError("masked normals are not unit length")


@dataclass
class RenderedSample:
    """An image stack with its calibrated lights and ground truth.

    ``images`` is ``(J, H, W)``; ``light_dirs`` ``(J, 3)``; ``light_intensities`` ``(J,)``.
    ``normals`` may be None for data without ground truth.
    """

    images: np.ndarray
    light_dirs: np.ndarray
    light_intensities: np.ndarray
    mask: np.ndarray
    normals: NormalMap | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.light_dirs = np.asarray(self.light_dirs, dtype=np.float64).reshape(-1, 3)
        self.light_intensities = np.asarray(self.light_intensities, dtype=np.float64).reshape(-1)
        self.mask = np.asarray(self.mask, dtype=bool)
        j = self.images.shape[0]
        if len(self.light_dirs) != j or len(self.light_intensities) != j:
            raise ValueError(
                f"{j} images but {len(self.light_dirs)} directions / "
                f"{len(self.light_intensities)} intensities"
            )
        if self.images.shape[1:] != self.mask.shape:
            raise ValueError("image resolution does not match the mask")

    @property
    def lights(self) -> list[LightSource]:
        return make_lights(self.light_dirs, self.light_intensities)

    @property
    def num_lights(self) -> int:
        return len(self.light_dirs)
