"""Image ingestion, 8-bit output, padding and patch sampling.

Images are handled as float32 arrays shaped C x H x W with values in [0, 1].
PNG and binary PPM (P6) are read and written through Pillow.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import ImageReadError, UnsupportedPixelFormat

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm")
_CONVERTIBLE = {"RGB", "L", "P"}


def load_image(path: Union[str, Path]) -> np.ndarray:
    """Read an 8-bit image as a 3 x H x W float32 array in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode not in _CONVERTIBLE:
                raise UnsupportedPixelFormat(f"{path}: pixel format {mode!r} is not 8-bit RGB")
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except UnsupportedPixelFormat:
        raise
    except FileNotFoundError:
        raise ImageReadError(f"{path}: no such file") from None
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageReadError(f"{path}: cannot decode image ({exc})") from None
    return from_uint8(rgb.transpose(2, 0, 1))


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float32) / np.float32(255.0)).astype(np.float32)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """round(255 * v) clamped to [0, 255]; rounding is half away from zero."""
    scaled = np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def save_image(path: Union[str, Path], image: np.ndarray) -> None:
    """Write a C x H x W [0, 1] image (or uint8 pixels) as PNG or PPM by suffix."""
    path = Path(path)
    pixels = image if image.dtype == np.uint8 else to_uint8(image)
    hwc = np.ascontiguousarray(pixels.transpose(1, 2, 0))
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    Image.fromarray(hwc, mode="RGB").save(path, format=fmt)


def pad_to_multiple(image: np.ndarray, factor: int) -> np.ndarray:
    """Reflect-pad a C x H x W image at the bottom/right to multiples of ``factor``."""
    _, h, w = image.shape
    ph, pw = (-h) % factor, (-w) % factor
    if not ph and not pw:
        return image
    mode = "reflect" if ph < h and pw < w else "symmetric"
    if mode == "symmetric" and (ph > h or pw > w):
        mode = "edge"
    return np.pad(image, ((0, 0), (0, ph), (0, pw)), mode=mode)


def list_images(directory: Union[str, Path]) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


class PatchSource:
    """Uniformly random square crops from a fixed set of images.

    ``images`` may be arrays (C x H x W in [0, 1]) or file paths. Every patch
    has exactly ``patch_size`` extents.
    """

    def __init__(self, images: Iterable, patch_size: int, seed: int = 0):
        self.patch_size = int(patch_size)
        self.seed = seed
        self.images = [load_image(im) if isinstance(im, (str, Path)) else np.asarray(im, np.float32)
                       for im in images]
        if not self.images:
            raise ValueError("patch source needs at least one image")
        for im in self.images:
            if im.shape[1] < self.patch_size or im.shape[2] < self.patch_size:
                raise ValueError(f"image {im.shape} is smaller than patch size {self.patch_size}")

    @classmethod
    def from_directory(cls, directory, patch_size: int, seed: int = 0) -> "PatchSource":
        files = list_images(directory)
        if not files:
            raise ImageReadError(f"{directory}: no PNG/PPM images found")
        return cls(files, patch_size, seed)

    def batch(self, rng: np.random.Generator, batch_size: int) -> np.ndarray:
        p = self.patch_size
        out = np.empty((batch_size, self.images[0].shape[0], p, p), dtype=np.float32)
        for i in range(batch_size):
            im = self.images[rng.integers(len(self.images))]
            top = rng.integers(im.shape[1] - p + 1)
            left = rng.integers(im.shape[2] - p + 1)
            out[i] = im[:, top:top + p, left:left + p]
        return out

    def extract(self, count: int) -> "PatchSet":
        """Freeze ``count`` crops, drawn with this source's seed, into a fixed pool."""
        rng = np.random.default_rng(self.seed)
        return PatchSet(self.batch(rng, count))


class PatchSet:
    """A fixed pool of patches; batches are drawn uniformly with replacement."""

    def __init__(self, patches: np.ndarray):
        self.patches = np.asarray(patches, dtype=np.float32)
        if self.patches.ndim != 4 or len(self.patches) == 0:
            raise ValueError(f"expected a non-empty N x C x P x P array, got {self.patches.shape}")

    @property
    def patch_size(self) -> int:
        return self.patches.shape[-1]

    def __len__(self) -> int:
        return len(self.patches)

    def batch(self, rng: np.random.Generator, batch_size: int) -> np.ndarray:
        return self.patches[rng.integers(len(self.patches), size=batch_size)]


# -- synthetic "desk" corpus ---------------------------------------------------

_LAND = np.array([[0.36, 0.45, 0.24], [0.52, 0.50, 0.33], [0.29, 0.38, 0.22], [0.61, 0.56, 0.42]])
_FIELDS = np.array([[0.55, 0.62, 0.30], [0.70, 0.64, 0.40], [0.40, 0.52, 0.25],
                    [0.62, 0.50, 0.35], [0.78, 0.74, 0.52], [0.33, 0.44, 0.20]])
_WATER = np.array([0.16, 0.27, 0.38])
_ROAD = np.array([0.58, 0.57, 0.55])
_ROOFS = np.array([[0.80, 0.78, 0.76], [0.66, 0.36, 0.30], [0.52, 0.53, 0.58], [0.90, 0.88, 0.82]])


def _smooth_field(rng, h, w, sigma) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    return (f - f.mean()) / (f.std() + 1e-12)


def synthetic_scene(rng: np.random.Generator, height: int = 128, width: int = 128) -> np.ndarray:
    """An aerial-looking RGB scene: terrain, parcels, water, roads and buildings.

    Returns a 3 x H x W float32 array quantized to 8-bit levels.
    """
    h, w = height, width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    # terrain: two palette colours blended by a smooth field, plus fine texture
    a, b = _LAND[rng.choice(len(_LAND), 2, replace=False)]
    t = 1.0 / (1.0 + np.exp(-1.5 * _smooth_field(rng, h, w, sigma=w / 8)))
    img = a[:, None, None] * t + b[:, None, None] * (1 - t)
    img = img + 0.04 * _smooth_field(rng, h, w, sigma=1.5)[None]

    # agricultural parcels
    for _ in range(rng.integers(3, 9)):
        ph, pw = rng.integers(h // 8, h // 2), rng.integers(w // 8, w // 2)
        top, left = rng.integers(0, h - ph), rng.integers(0, w - pw)
        colour = _FIELDS[rng.integers(len(_FIELDS))] + rng.normal(0, 0.03, 3)
        region = (slice(None), slice(top, top + ph), slice(left, left + pw))
        stripes = 0.03 * np.sin(2 * np.pi * (yy if rng.random() < 0.5 else xx)[region[1:]] / rng.uniform(3, 7))
        img[region] = colour[:, None, None] + stripes[None] + 0.02 * _smooth_field(rng, ph, pw, 1.0)[None]

    # a lake or river bend
    if rng.random() < 0.6:
        lake = _smooth_field(rng, h, w, sigma=w / 10) > rng.uniform(0.8, 1.4)
        lake = ndimage.binary_opening(lake, iterations=2)
        ripple = 0.02 * _smooth_field(rng, h, w, 2.0)
        img = np.where(lake[None], _WATER[:, None, None] + ripple[None], img)

    # roads: straight segments across the scene
    for _ in range(rng.integers(1, 4)):
        angle = rng.uniform(0, np.pi)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        dist = np.abs((yy - cy) * np.cos(angle) - (xx - cx) * np.sin(angle))
        width_px = rng.uniform(1.0, 2.5)
        road = np.clip(width_px + 0.5 - dist, 0, 1)
        img = img * (1 - road[None]) + _ROAD[:, None, None] * road[None]

    # buildings with a shadow offset
    for _ in range(rng.integers(4, 20)):
        bh, bw = rng.integers(3, max(4, h // 10)), rng.integers(3, max(4, w // 10))
        top, left = rng.integers(1, h - bh - 2), rng.integers(1, w - bw - 2)
        img[:, top + 2:top + bh + 2, left + 2:left + bw + 2] *= 0.55
        img[:, top:top + bh, left:left + bw] = (_ROOFS[rng.integers(len(_ROOFS))] + rng.normal(0, 0.02, 3))[:, None, None]

    img = ndimage.gaussian_filter(img, sigma=(0, 0.6, 0.6))
    img = img + rng.normal(0, 0.01, img.shape)
    return from_uint8(to_uint8(np.clip(img, 0.0, 1.0)))


def desk_corpus(count: int, size: int = 128, seed: int = 0) -> list[np.ndarray]:
    """``count`` deterministic synthetic scenes of ``size`` x ``size`` pixels."""
    return [synthetic_scene(np.random.default_rng([seed, i]), size, size) for i in range(count)]


def write_desk_corpus(directory: Union[str, Path], count: int, size: int = 128, seed: int = 0) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(desk_corpus(count, size, seed)):
        path = directory / f"scene_{seed:04d}_{i:03d}.png"
        save_image(path, img)
        paths.append(path)
    return paths


def load_images(paths: Sequence[Union[str, Path]], skip_unreadable: bool = True) -> list[tuple[str, np.ndarray]]:
    """Load images by path, skipping (with a warning) those that cannot be read."""
    out = []
    for p in paths:
        try:
            out.append((Path(p).name, load_image(p)))
        except (ImageReadError, UnsupportedPixelFormat) as exc:
            if not skip_unreadable:
                raise
            log.warning("skipping %s", exc)
    return out
