"""Differentiable convolutions and activations on NCHW tensors.

Convolutions are cross-correlations (no kernel flip) lowered to a single
matrix product through an im2col view. ``transposed_conv2d`` is implemented as
the exact adjoint of ``conv2d``: its forward pass is the input-gradient of the
convolution and vice versa, so the adjoint identity holds to rounding error.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ShapeError(ValueError):
    """Incompatible tensor shapes for an operation."""


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def transposed_output_size(size: int, kernel: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def _padded_cnhw(x: np.ndarray, padding: int) -> np.ndarray:
    n, c, h, w = x.shape
    buf = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    buf[:, :, padding:padding + h, padding:padding + w] = x.transpose(1, 0, 2, 3)
    return buf


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    """Patch matrix of ``x`` with rows ordered (ki, kj, c) and columns (n, ho, wo).

    This ordering keeps every per-offset slice contiguous, which is what makes
    both the gather here and the scatter in ``_col2im`` cheap.
    """
    n, c, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    xp = _padded_cnhw(x, padding)
    cols = np.empty((k, k, c, n, ho, wo), dtype=x.dtype)
    row_span = stride * (ho - 1) + 1
    col_span = stride * (wo - 1) + 1
    for ki in range(k):
        for kj in range(k):
            cols[ki, kj] = xp[:, :, ki:ki + row_span:stride, kj:kj + col_span:stride]
    return cols.reshape(k * k * c, n * ho * wo), ho, wo


def _col2im(cols: np.ndarray, shape: tuple, ho: int, wo: int, k: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add a patch matrix back onto an (N, C, H, W) image; adjoint of ``_im2col``."""
    n, c, h, w = shape
    hp = max(h + 2 * padding, stride * (ho - 1) + k)
    wp = max(w + 2 * padding, stride * (wo - 1) + k)
    padded = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    patches = cols.reshape(k, k, c, n, ho, wo)
    row_span = stride * (ho - 1) + 1
    col_span = stride * (wo - 1) + 1
    for ki in range(k):
        for kj in range(k):
            padded[:, :, ki:ki + row_span:stride, kj:kj + col_span:stride] += patches[ki, kj]
    return padded[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3)


def _kernel_matrix(w: np.ndarray) -> np.ndarray:
    """(O, C, K, K) kernel as an (O, K*K*C) matrix matching the patch row order."""
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _kernel_from_matrix(m: np.ndarray, shape: tuple) -> np.ndarray:
    o, c, k, _ = shape
    return np.ascontiguousarray(m.reshape(o, k, k, c).transpose(0, 3, 1, 2))


def _nchw_from_rows(m: np.ndarray, n: int, ho: int, wo: int) -> np.ndarray:
    """(O, N*Ho*Wo) matrix to a contiguous (N, O, Ho, Wo) array."""
    return np.ascontiguousarray(m.reshape(-1, n, ho, wo).transpose(1, 0, 2, 3))


def _rows_from_nchw(a: np.ndarray) -> np.ndarray:
    """(N, O, Ho, Wo) array to an (O, N*Ho*Wo) matrix."""
    return a.transpose(1, 0, 2, 3).reshape(a.shape[1], -1)


def _check_common(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"expected 4-d input and kernel, got input {x.shape} and kernel {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernel must be square, got kernel {w.shape} for input {x.shape}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` (N, C, H, W) with ``kernel`` (O, C, K, K)."""
    xd, wd = x.data, kernel.data
    _check_common(xd, wd, stride, padding)
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"input channels do not match kernel: input {xd.shape}, kernel {wd.shape}")
    k = wd.shape[2]
    ho = conv_output_size(xd.shape[2], k, stride, padding)
    wo = conv_output_size(xd.shape[3], k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty: input {xd.shape}, kernel {wd.shape}, stride {stride}, padding {padding}")

    n = xd.shape[0]
    cols, ho, wo = _im2col(xd, k, stride, padding)
    wmat = _kernel_matrix(wd)
    out = _nchw_from_rows(wmat @ cols, n, ho, wo)
    x_shape = xd.shape

    def backward(g):
        gmat = _rows_from_nchw(g)
        gx = _col2im(wmat.T @ gmat, x_shape, ho, wo, k, stride, padding) if x.requires_grad else None
        gw = _kernel_from_matrix(gmat @ cols.T, wd.shape) if kernel.requires_grad else None
        return gx, gw

    return Tensor._make(out, (x, kernel), backward)


def transposed_conv2d(y: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
                      output_padding: int = 0) -> Tensor:
    """Adjoint of ``conv2d``: maps (N, O, Ho, Wo) to (N, C, H, W) for a kernel (O, C, K, K).

    ``output_padding`` picks among the input sizes that a strided convolution
    maps onto the same output size; it must be smaller than ``stride``.
    """
    yd, wd = y.data, kernel.data
    _check_common(yd, wd, stride, padding)
    if yd.shape[1] != wd.shape[0]:
        raise ShapeError(f"input channels do not match kernel: input {yd.shape}, kernel {wd.shape}")
    if not 0 <= output_padding < stride:
        raise ValueError(f"output_padding must lie in [0, stride), got {output_padding}")
    k = wd.shape[2]
    n, o, ho, wo = yd.shape
    c = wd.shape[1]
    h = transposed_output_size(ho, k, stride, padding, output_padding)
    w = transposed_output_size(wo, k, stride, padding, output_padding)
    if h < 1 or w < 1:
        raise ShapeError(f"transposed_conv2d output would be empty: input {yd.shape}, kernel {wd.shape}")

    wmat = _kernel_matrix(wd)
    ymat = _rows_from_nchw(yd)
    out = np.ascontiguousarray(_col2im(wmat.T @ ymat, (n, c, h, w), ho, wo, k, stride, padding))

    def backward(g):
        gcols, gho, gwo = _im2col(g, k, stride, padding)
        assert (gho, gwo) == (ho, wo)
        gy = _nchw_from_rows(wmat @ gcols, n, ho, wo) if y.requires_grad else None
        gw = _kernel_from_matrix(ymat @ gcols.T, wd.shape) if kernel.requires_grad else None
        return gy, gw

    return Tensor._make(out, (y, kernel), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    a = x.data
    factor = np.where(a > 0, np.asarray(1.0, a.dtype), np.asarray(slope, a.dtype))
    return Tensor._make(a * factor, (x,), lambda g: (g * factor,))


def stable_sigmoid(a: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function on a raw array."""
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clipped so outputs stay strictly inside (0, 1)."""
    a = x.data
    info = np.finfo(a.dtype)
    out = np.clip(stable_sigmoid(a), info.tiny, np.nextafter(a.dtype.type(1), a.dtype.type(0)))
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mse needs equal shapes, got {a.shape} and {b.shape}")
    return (a - b).square().mean()
