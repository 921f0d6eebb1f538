"""Image fidelity metrics and bits-per-pixel accounting.

All functions are pure and operate on float arrays shaped C x H x W (a
leading batch axis is also accepted by ``mse`` and ``psnr``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 8
SSIM_STRIDE = 4


def _pair(reference, test) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(reference, test) -> float:
    a, b = _pair(reference, test)
    return float(np.mean((a - b) ** 2))


def psnr(reference, test, dynamic_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    return psnr_from_mse(mse(reference, test), dynamic_range)


def psnr_from_mse(value: float, dynamic_range: float = 1.0) -> float:
    if value < 0:
        raise ValueError(f"mse must be non-negative, got {value}")
    if value == 0:
        return math.inf
    return 20.0 * math.log10(dynamic_range / math.sqrt(value))


def ssim(reference, test, dynamic_range: float = 1.0, window: int = SSIM_WINDOW,
         stride: int = SSIM_STRIDE) -> float:
    """Mean structural similarity over uniform ``window`` x ``window`` patches.

    Windows step by ``stride``; statistics are population (biased) moments.
    Each channel is scored separately and the channel scores are averaged.
    """
    a, b = _pair(reference, test)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ValueError(f"ssim expects C x H x W images, got shape {a.shape}")
    if a.shape[1] < window or a.shape[2] < window:
        raise ValueError(f"image {a.shape[1]}x{a.shape[2]} is smaller than the {window}x{window} SSIM window")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2

    wa = sliding_window_view(a, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    wb = sliding_window_view(b, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-1, -2))
    var_b = (db * db).mean(axis=(-1, -2))
    cov = (da * db).mean(axis=(-1, -2))

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    per_channel = (num / den).mean(axis=(1, 2))
    return float(per_channel.mean())


def bpp(bits, width: int, height: int) -> float:
    """Bits per pixel over the true (unpadded) image extents.

    ``bits`` is a bit count, a byte string, or anything with ``bit_length``.
    """
    if width < 1 or height < 1:
        raise ValueError(f"image extents must be positive, got {width}x{height}")
    if hasattr(bits, "bit_length") and not isinstance(bits, int):
        bits = bits.bit_length
    elif isinstance(bits, (bytes, bytearray)):
        bits = 8 * len(bits)
    return float(bits) / (width * height)


@dataclass(frozen=True)
class ImagePair:
    reference: np.ndarray
    test: np.ndarray
    dynamic_range: float = 1.0

    def __post_init__(self):
        _pair(self.reference, self.test)

    def mse(self) -> float:
        return mse(self.reference, self.test)

    def psnr(self) -> float:
        return psnr(self.reference, self.test, self.dynamic_range)

    def ssim(self) -> float:
        return ssim(self.reference, self.test, self.dynamic_range)
