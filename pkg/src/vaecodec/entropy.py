"""Learned factorized prior over integer latents.

Each latent channel owns one logistic density with a trainable location and
log-scale. The probability of an integer symbol is the density's mass over the
unit bin centred on it, which the logistic CDF gives in closed form. The same
prior yields the training-time rate estimate and, once frozen into integer
frequency tables, the distribution the range coder codes against.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .engine import Parameter, Tensor, stable_sigmoid, unbroadcast

LIKELIHOOD_FLOOR = 1e-9
PRECISION_BITS = 16
DEFAULT_TAIL_MASS = 1e-4
# Tables wider than this fall back to the escape path for the remaining tail.
MAX_SUPPORT = 4096


class FactorizedPrior:
    """Per-channel logistic densities, parameterised as (location, log_scale)."""

    def __init__(self, channels: int, dtype=np.float32, location=None, log_scale=None):
        if channels < 1:
            raise ValueError(f"channels must be positive, got {channels}")
        loc = np.zeros(channels) if location is None else np.asarray(location, dtype=np.float64)
        logs = np.zeros(channels) if log_scale is None else np.asarray(log_scale, dtype=np.float64)
        if loc.shape != (channels,) or logs.shape != (channels,):
            raise ValueError(f"prior parameters must have shape ({channels},)")
        self.location = Parameter(loc.astype(dtype), name="prior.location")
        self.log_scale = Parameter(logs.astype(dtype), name="prior.log_scale")

    @property
    def channels(self) -> int:
        return self.location.shape[0]

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale.data)

    def parameters(self) -> list[Parameter]:
        return [self.location, self.log_scale]

    def astype(self, dtype) -> "FactorizedPrior":
        return FactorizedPrior(self.channels, dtype, self.location.data, self.log_scale.data)

    def __repr__(self) -> str:
        return f"FactorizedPrior(channels={self.channels})"


def _channel_view(param: np.ndarray, ndim: int, channel_axis: int) -> np.ndarray:
    if param.shape[0] == 1:
        return param.reshape((1,) * ndim)
    if ndim <= channel_axis:
        raise ValueError(f"values with {ndim} dims have no channel axis {channel_axis}")
    shape = [1] * ndim
    shape[channel_axis] = param.shape[0]
    return param.reshape(shape)


def add_uniform_noise(latent, rng_seed: int):
    """Return ``latent + u`` with u ~ Uniform(-0.5, 0.5) drawn from ``rng_seed``.

    Accepts a :class:`Tensor` or a :class:`~vaecodec.vae.LatentTensor` and
    returns the same kind.
    """
    from .vae import LatentTensor

    if isinstance(latent, LatentTensor):
        if latent.quantized:
            raise ValueError("noise is added to continuous latents, got a quantized one")
        return LatentTensor(add_uniform_noise(latent.values, rng_seed), quantized=False)
    rng = np.random.default_rng(rng_seed)
    noise = rng.uniform(-0.5, 0.5, size=latent.shape).astype(latent.dtype)
    return latent + Tensor(noise)


def likelihood(values: Tensor, prior: FactorizedPrior, channel_axis: int = 1) -> Tensor:
    """Mass of each value's unit bin under its channel's logistic density.

    Floored at 1e-9 so the log stays finite. Differentiable with respect to
    ``values``, ``prior.location`` and ``prior.log_scale``.
    """
    if not isinstance(values, Tensor):
        values = Tensor(values)
    z = values.data
    loc = _channel_view(prior.location.data, z.ndim, channel_axis)
    log_s = _channel_view(prior.log_scale.data, z.ndim, channel_axis)
    s = np.exp(log_s)

    # Mirror onto the lower tail, where both CDF values are small and the
    # difference keeps its relative precision.
    d = -np.abs(z - loc)
    upper = stable_sigmoid((d + 0.5) / s)
    lower = stable_sigmoid((d - 0.5) / s)
    p = upper - lower
    floor = np.asarray(LIKELIHOOD_FLOOR, dtype=p.dtype)
    active = p > floor
    out = np.where(active, p, floor)

    a = (z - loc + 0.5) / s
    b = (z - loc - 0.5) / s
    sa = stable_sigmoid(a)
    sb = stable_sigmoid(b)
    da = sa * (1.0 - sa)
    db = sb * (1.0 - sb)
    dp_dz = np.where(active, (da - db) / s, 0.0).astype(z.dtype, copy=False)
    dp_dlogs = np.where(active, -(a * da - b * db), 0.0).astype(z.dtype, copy=False)
    loc_shape = prior.location.shape

    def backward(g):
        gz = g * dp_dz
        gloc = unbroadcast(-gz, loc.shape).reshape(loc_shape)
        glogs = unbroadcast(g * dp_dlogs, log_s.shape).reshape(loc_shape)
        return gz, gloc, glogs

    return Tensor._make(out, (values, prior.location, prior.log_scale), backward)


def rate_bits(values: Tensor, prior: FactorizedPrior, channel_axis: int = 1) -> Tensor:
    """Total code length, in bits, of ``values`` under ``prior`` (not per pixel)."""
    p = likelihood(values, prior, channel_axis)
    return p.log().sum() * (-1.0 / math.log(2.0))


def _histogram_probabilities(histogram) -> dict:
    if isinstance(histogram, Mapping):
        items = {k: float(v) for k, v in histogram.items()}
    else:
        items = {i: float(v) for i, v in enumerate(np.asarray(histogram, dtype=np.float64).ravel())}
    if any(v < 0 for v in items.values()):
        raise ValueError("histogram counts must be non-negative")
    total = sum(items.values())
    if total <= 0:
        raise ValueError("histogram is empty")
    return {k: v / total for k, v in items.items() if v > 0}


def entropy_of_source(histogram) -> float:
    """Shannon entropy in bits/symbol of a count histogram (array or mapping)."""
    probs = np.array(list(_histogram_probabilities(histogram).values()))
    return float(-(probs * np.log2(probs)).sum())


def cross_entropy(p_histogram, q_model, channel: int = 0) -> float:
    """Expected code length in bits/symbol of symbols from ``p_histogram`` under ``q_model``.

    ``q_model`` may be a :class:`FactorizedPrior` (analytic bin masses for
    ``channel``), a :class:`CmfTable` (quantized masses, escape included), or
    a mapping from symbol to probability. Histogram keys are the integer
    symbols; a plain array histogram is indexed from 0.
    """
    probs = _histogram_probabilities(p_histogram)
    symbols = np.array(list(probs.keys()), dtype=np.float64)
    p = np.array(list(probs.values()))
    if isinstance(q_model, FactorizedPrior):
        single = FactorizedPrior(1, np.float64, q_model.location.data[channel:channel + 1],
                                 q_model.log_scale.data[channel:channel + 1])
        q = likelihood(Tensor(symbols), single, channel_axis=0).data
    elif isinstance(q_model, CmfTable):
        q = np.array([q_model.symbol_probability(int(k)) for k in symbols])
    else:
        q = np.array([float(q_model.get(k, 0.0)) for k in probs])
        if np.any(q <= 0):
            raise ValueError("model assigns zero probability to an observed symbol")
    return float(-(p * np.log2(q)).sum())


@dataclass(frozen=True)
class CmfTable:
    """Integer cumulative frequencies for one channel, escape symbol last.

    ``cdf`` has one entry more than there are coded symbols: ``cdf[0] == 0``
    and ``cdf[-1] == 2**precision_bits``. Symbol ``v`` in
    ``[support_min, support_max]`` maps to index ``v - support_min``; every
    other integer is coded as the escape index followed by a raw value.
    """

    channel: int
    support_min: int
    support_max: int
    cdf: np.ndarray = field(repr=False)
    precision_bits: int = PRECISION_BITS

    def __post_init__(self):
        cdf = np.asarray(self.cdf, dtype=np.int64)
        object.__setattr__(self, "cdf", cdf)
        expected = self.support_max - self.support_min + 3
        if cdf.shape != (expected,):
            raise ValueError(f"cdf must have {expected} entries for support "
                             f"[{self.support_min}, {self.support_max}], got {cdf.shape}")
        if cdf[0] != 0 or cdf[-1] != 1 << self.precision_bits:
            raise ValueError("cdf must start at 0 and end at 2**precision_bits")
        if np.any(np.diff(cdf) < 1):
            raise ValueError("every symbol needs a strictly positive frequency")

    @classmethod
    def from_counts(cls, counts, support_min: int = 0, channel: int = 0,
                    precision_bits: int = PRECISION_BITS) -> "CmfTable":
        """Build from per-symbol frequencies, escape frequency last."""
        counts = np.asarray(counts, dtype=np.int64)
        cdf = np.concatenate([[0], np.cumsum(counts)])
        return cls(channel, support_min, support_min + len(counts) - 2, cdf, precision_bits)

    @property
    def total(self) -> int:
        return 1 << self.precision_bits

    @property
    def num_symbols(self) -> int:
        """Coded alphabet size, escape included."""
        return len(self.cdf) - 1

    @property
    def escape_index(self) -> int:
        return self.num_symbols - 1

    def frequencies(self) -> np.ndarray:
        return np.diff(self.cdf)

    def probabilities(self) -> np.ndarray:
        return self.frequencies() / float(self.total)

    def in_support(self, value: int) -> bool:
        return self.support_min <= value <= self.support_max

    def symbol_probability(self, value: int) -> float:
        """Quantized probability of the table's own index for ``value`` (escape for outliers)."""
        freqs = self.frequencies()
        idx = value - self.support_min if self.in_support(value) else self.escape_index
        return freqs[idx] / float(self.total)

    def codelength(self, value: int) -> float:
        """Ideal bits for ``value``, including the raw payload of an escape."""
        bits = -math.log2(self.symbol_probability(value))
        return bits if self.in_support(value) else bits + ESCAPE_RAW_BITS


ESCAPE_RAW_BITS = 32


def _logistic_cdf(x: np.ndarray) -> np.ndarray:
    return stable_sigmoid(np.asarray(x, dtype=np.float64))


def _quantize_masses(masses: np.ndarray, total: int) -> np.ndarray:
    """Integer frequencies summing to ``total``, each at least 1, close to ``masses * total``."""
    target = masses / masses.sum() * total
    counts = np.maximum(np.floor(target).astype(np.int64), 1)
    deficit = total - int(counts.sum())
    if deficit > 0:
        order = np.argsort(-(target - counts), kind="stable")
        counts[order[:deficit]] += 1
    while deficit < 0:
        # Take back from the most over-allocated symbols that can spare a count.
        spare = np.flatnonzero(counts > 1)
        order = spare[np.argsort((target - counts)[spare], kind="stable")]
        take = order[:-deficit]
        counts[take] -= 1
        deficit += len(take)
    return counts


def freeze_cmf(prior: FactorizedPrior, tail_mass: float = DEFAULT_TAIL_MASS,
               precision_bits: int = PRECISION_BITS) -> list[CmfTable]:
    """Discretize every channel's density into a coding table.

    The support of each channel covers all but ``tail_mass`` of its density;
    the mass outside the support goes to the escape symbol. Computed in double
    precision from the stored parameters, so encoder and decoder rebuild
    identical tables from the same checkpoint.
    """
    if not 0 < tail_mass <= 0.01:
        raise ValueError(f"tail_mass must lie in (0, 0.01], got {tail_mass}")
    total = 1 << precision_bits
    locs = prior.location.data.astype(np.float64)
    scales = np.exp(prior.log_scale.data.astype(np.float64))
    half = tail_mass / 2.0
    tail_quantile = math.log(half / (1.0 - half))  # negative

    tables = []
    for c, (mu, s) in enumerate(zip(locs, scales)):
        lo = int(math.floor(mu + s * tail_quantile))
        hi = int(math.ceil(mu - s * tail_quantile))
        if hi - lo + 1 > MAX_SUPPORT:
            centre = int(round(mu))
            lo, hi = centre - MAX_SUPPORT // 2, centre + MAX_SUPPORT // 2 - 1
        edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5
        cdf = _logistic_cdf((edges - mu) / s)
        masses = np.diff(cdf)
        escape = max(cdf[0] + (1.0 - cdf[-1]), 0.0)
        masses = np.append(np.maximum(masses, 0.0), escape)
        counts = _quantize_masses(masses, total)
        tables.append(CmfTable.from_counts(counts, lo, c, precision_bits))
    return tables
