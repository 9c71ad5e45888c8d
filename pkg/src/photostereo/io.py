"""Dataset directories, float normal maps and checkpoint persistence.

A dataset directory holds::

    filenames.txt           one image file name per line
    light_directions.txt    one ``x y z`` triple per line
    light_intensities.txt   one value, or ``r g b``, per line
    mask.png                nonzero where the object is
    normal_gt.pfm           optional ground truth (see :func:`write_normal_map`)

This is the layout of the public DiLiGenT release, which additionally ships
its ground truth as ``Normal_gt.mat``; that file is read when no
``normal_gt.pfm`` is present.
"""

from __future__ import annotations

import logging
import os
import re
from pathlib import Path

import cv2
import numpy as np

from .core import NormalMap, RenderedSample
from .nn.checkpoint import CheckpointError, load as load_checkpoint, save as save_checkpoint

__all__ = [
    "CheckpointError",
    "DatasetError",
    "load_checkpoint",
    "read_dataset",
    "read_image",
    "read_normal_map",
    "save_checkpoint",
    "write_dataset",
    "write_image",
    "write_normal_map",
]

log = logging.getLogger(__name__)

FILENAMES = "filenames.txt"
LIGHT_DIRECTIONS = "light_directions.txt"
LIGHT_INTENSITIES = "light_intensities.txt"
MASK = "mask.png"
NORMAL_GT = "normal_gt.pfm"
NORMAL_GT_MAT = "Normal_gt.mat"

DIRECTION_TOL = 1e-3
_MIN_NORM = 1e-6


class DatasetError(ValueError):
    """A dataset directory or data file is missing, malformed or inconsistent."""


# -- images -----------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """Load an image as linear float64 in [0, 1]; color is collapsed to the channel mean."""
    img = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DatasetError(f"cannot read image {path}")
    if img.dtype == np.uint16:
        img = img.astype(np.float64) / 65535.0
    elif img.dtype == np.uint8:
        img = img.astype(np.float64) / 255.0
    else:
        raise DatasetError(f"unsupported sample type {img.dtype} in {path}")
    if img.ndim == 3:
        img = img[..., :3].mean(axis=2)  # alpha, if any, is ignored
    return img


def write_image(path, img: np.ndarray, bits: int = 16) -> None:
    """Write a [0, 1] grayscale array as an 8- or 16-bit PNG."""
    top = {8: 255, 16: 65535}[bits]
    dtype = np.uint8 if bits == 8 else np.uint16
    q = np.rint(np.clip(img, 0.0, 1.0) * top).astype(dtype)
    if not cv2.imwrite(os.fspath(path), q):
        raise DatasetError(f"cannot write image {path}")


# -- normal maps --------------------------------------------------------------

_PFM_HEADER = re.compile(rb"PF (\d+) (\d+) (-?\d+(?:\.\d*)?)\n")


def write_normal_map(path, nmap: NormalMap) -> None:
    """Write a normal map as a 3-channel float map.

    The file is a single header line ``PF <width> <height> <scale>\\n``
    (negative scale: little-endian) followed by ``height`` rows of
    ``width * 3`` float32 values, top row first. Pixels outside the mask are
    stored as zero vectors.
    """
    h, w = nmap.shape
    data = np.where(nmap.mask[..., None], nmap.normals, 0.0).astype("<f4")
    with open(path, "wb") as f:
        f.write(f"PF {w} {h} -1.0\n".encode("ascii"))
        f.write(data.tobytes())


def read_normal_map(path) -> NormalMap:
    """Inverse of :func:`write_normal_map`; zero vectors read back as masked out."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read normal map {path}: {e}") from e
    m = _PFM_HEADER.match(raw)
    if m is None:
        raise DatasetError(f"{path}: malformed float-map header")
    w, h, scale = int(m.group(1)), int(m.group(2)), float(m.group(3))
    if w == 0 or h == 0:
        raise DatasetError(f"{path}: empty image {w}x{h}")
    payload = raw[m.end():]
    expected = w * h * 3 * 4
    if len(payload) != expected:
        raise DatasetError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    order = "<f4" if scale < 0 else ">f4"
    normals = np.frombuffer(payload, dtype=order).reshape(h, w, 3).astype(np.float64)
    if not np.all(np.isfinite(normals)):
        raise DatasetError(f"{path}: non-finite values")
    return NormalMap(normals, np.any(normals != 0, axis=2))


def _read_mat_normals(path) -> np.ndarray:
    from scipy.io import loadmat

    try:
        content = loadmat(path)
    except Exception as e:  # scipy raises several unrelated types for bad files
        raise DatasetError(f"cannot read {path}: {e}") from e
    if "Normal_gt" not in content:
        raise DatasetError(f"{path}: no 'Normal_gt' variable")
    return np.asarray(content["Normal_gt"], dtype=np.float64)


# -- dataset directories --------------------------------------------------------

def _read_table(path, widths: tuple[int, ...]) -> np.ndarray:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    rows = []
    for num, line in enumerate(lines, 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in widths:
            raise DatasetError(f"{path}:{num}: expected {' or '.join(map(str, widths))} values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as e:
            raise DatasetError(f"{path}:{num}: {e}") from e
        if len(rows[-1]) != len(rows[0]):
            raise DatasetError(f"{path}:{num}: inconsistent number of columns")
    if not rows:
        raise DatasetError(f"{path}: no entries")
    arr = np.array(rows)
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"{path}: non-finite values")
    return arr


def _unit_directions(dirs: np.ndarray, path) -> np.ndarray:
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms < _MIN_NORM):
        raise DatasetError(f"{path}: zero-length light direction")
    off = np.abs(norms - 1.0) > DIRECTION_TOL
    if off.any():
        log.warning("%s: %d light directions are not unit length; normalizing", path, int(off.sum()))
    dirs = dirs / norms[:, None]
    if np.any(dirs[:, 2] < 0):
        raise DatasetError(f"{path}: light direction behind the image plane (z < 0)")
    return dirs


def read_dataset(path, drop_first: int = 0, flip_gt: bool = False, name: str | None = None) -> RenderedSample:
    """Load a dataset directory.

    ``drop_first`` discards the first N images with their lights; ``flip_gt``
    flips the ground-truth normal map upside down. Both exist for DiLiGenT
    objects whose release needs them (Bear, Harvest).
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    try:
        names = [s.strip() for s in (root / FILENAMES).read_text().splitlines() if s.strip()]
    except OSError as e:
        raise DatasetError(f"cannot read {root / FILENAMES}: {e}") from e
    dirs = _unit_directions(_read_table(root / LIGHT_DIRECTIONS, (3,)), root / LIGHT_DIRECTIONS)
    ints = _read_table(root / LIGHT_INTENSITIES, (1, 3)).mean(axis=1)
    if not (len(names) == len(dirs) == len(ints)):
        raise DatasetError(f"{root}: {len(names)} images, {len(dirs)} directions, {len(ints)} intensities")
    if np.any(ints <= 0):
        raise DatasetError(f"{root / LIGHT_INTENSITIES}: intensities must be positive")
    if not 0 <= drop_first < len(names):
        raise DatasetError(f"cannot drop {drop_first} of {len(names)} images")
    names, dirs, ints = names[drop_first:], dirs[drop_first:], ints[drop_first:]

    mask = read_image(root / MASK) > 0
    images = np.empty((len(names),) + mask.shape)
    for j, fname in enumerate(names):
        img = read_image(root / fname)
        if img.shape != mask.shape:
            raise DatasetError(f"{fname}: resolution {img.shape} differs from mask {mask.shape}")
        images[j] = img

    normals = None
    if (root / NORMAL_GT).exists():
        normals = read_normal_map(root / NORMAL_GT)
    elif (root / NORMAL_GT_MAT).exists():
        n = _read_mat_normals(root / NORMAL_GT_MAT)
        normals = NormalMap(n, np.linalg.norm(n, axis=2) > 0.5) if n.ndim == 3 and n.shape[2] == 3 else None
        if normals is None:
            raise DatasetError(f"{root / NORMAL_GT_MAT}: expected an (H, W, 3) array")
    if normals is not None:
        if normals.shape != mask.shape:
            raise DatasetError(f"ground truth {normals.shape} differs from mask {mask.shape}")
        if flip_gt:
            normals = NormalMap(normals.normals[::-1].copy(), normals.mask[::-1].copy())
        normals = NormalMap(normals.normals, normals.mask & mask)
    return RenderedSample(images, dirs, ints, mask, normals, name=name or root.name,
                          meta={"path": str(root), "drop_first": drop_first, "flip_gt": flip_gt})


def write_dataset(sample: RenderedSample, path) -> None:
    """Write a sample in the dataset layout with 16-bit images.

    Images are divided by their common maximum ``s`` and the intensities by
    the same ``s``, so the ratios ``I / L`` that observation maps use are kept
    up to 16-bit quantization.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    s = float(np.max(sample.images)) if sample.images.size else 0.0
    s = s if s > 0 else 1.0
    digits = max(3, len(str(sample.num_lights)))
    names = [f"{j + 1:0{digits}d}.png" for j in range(sample.num_lights)]
    for fname, img in zip(names, sample.images):
        write_image(root / fname, img / s)
    (root / FILENAMES).write_text("".join(n + "\n" for n in names))
    (root / LIGHT_DIRECTIONS).write_text(
        "".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in sample.light_dirs))
    (root / LIGHT_INTENSITIES).write_text(
        "".join(f"{v:.17g} {v:.17g} {v:.17g}\n" for v in sample.light_intensities / s))
    write_image(root / MASK, sample.mask.astype(np.float64), bits=8)
    if sample.normals is not None:
        write_normal_map(root / NORMAL_GT, sample.normals)
