"""Figures written next to the CSV outputs (rate-distortion curve, training telemetry)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def figure_path(csv_path, suffix: str = ".png") -> Path:
    """Sibling of ``csv_path`` with the figure suffix."""
    return Path(csv_path).with_suffix(suffix)


def plot_rd_curve(points: Sequence, path) -> Path:
    """Two panels against bpp: PSNR and SSIM, each point labelled with its latent width."""
    points = sorted(points, key=lambda p: p.bpp)
    x = [p.bpp for p in points]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), constrained_layout=True)
    for ax, key, label in ((axes[0], "psnr", "PSNR (dB)"), (axes[1], "ssim", "SSIM")):
        y = [getattr(p, key) for p in points]
        ax.plot(x, y, "o-", color="tab:blue")
        for p, yi in zip(points, y):
            ax.annotate(str(p.latent_channels), (p.bpp, yi), textcoords="offset points",
                        xytext=(4, -10), fontsize=8)
        ax.set_xlabel("bits per pixel")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    fig.suptitle("Rate-distortion over latent width")
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _smooth(values: np.ndarray, width: int) -> np.ndarray:
    if width <= 1 or len(values) < width:
        return values
    kernel = np.ones(width) / width
    return np.convolve(values, kernel, mode="valid")


def plot_telemetry(rows: Sequence[dict], path, smooth: int = 25) -> Path:
    """Loss, MSE and estimated rate per step, raw and with a moving average."""
    steps = np.array([r["step"] for r in rows])
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True, constrained_layout=True)
    for ax, key, label in zip(axes, ("loss", "mse", "rate_bpp"), ("loss", "MSE", "rate (bpp)")):
        y = np.array([r[key] for r in rows], dtype=np.float64)
        ax.plot(steps, y, color="0.75", linewidth=0.8)
        sm = _smooth(y, smooth)
        if len(sm) != len(y):
            ax.plot(steps[smooth - 1:], sm, color="tab:red", linewidth=1.2)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        if key == "mse" and np.all(y > 0):
            ax.set_yscale("log")
    axes[-1].set_xlabel("step")
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
