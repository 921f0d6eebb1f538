"""Central finite-difference checks for reverse-mode gradients (float64 only)."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-6,
                   indices: Optional[Sequence[tuple]] = None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``tensor``.

    Entries not listed in ``indices`` are left as NaN.
    """
    data = tensor.data
    grad = np.full(data.shape, np.nan)
    if indices is None:
        indices = list(np.ndindex(data.shape))
    for idx in indices:
        old = data[idx]
        data[idx] = old + eps
        plus = fn().item()
        data[idx] = old - eps
        minus = fn().item()
        data[idx] = old
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||)."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-6,
                    max_entries: Optional[int] = None, seed: int = 0) -> dict:
    """Compare backprop gradients of ``fn`` against central differences.

    Returns the relative error per tensor (keyed by position). At most
    ``max_entries`` randomly chosen entries per tensor are probed.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise TypeError("gradient checks run in double precision")
        t.grad = None
    backward(fn())
    rng = np.random.default_rng(seed)
    errors = {}
    for pos, t in enumerate(tensors):
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        all_idx = list(np.ndindex(t.shape))
        if max_entries is not None and len(all_idx) > max_entries:
            picks = rng.choice(len(all_idx), size=max_entries, replace=False)
            all_idx = [all_idx[i] for i in sorted(picks)]
        numeric = numerical_grad(fn, t, eps, all_idx)
        sel = tuple(np.array(all_idx).T)
        errors[pos] = relative_error(analytic[sel], numeric[sel])
        t.grad = None
    return errors
