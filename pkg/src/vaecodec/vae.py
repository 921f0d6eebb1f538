"""Fully convolutional encoder/decoder pair and latent quantization.

The encoder is a stack of stride-2 5x5 convolutions with leaky ReLU between
layers and a linear last layer, so latents are unbounded. The decoder mirrors
it with transposed convolutions and ends in a sigmoid. No normalization
layers, no hyperprior.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np

from .engine import (
    Parameter,
    ShapeError,
    Tensor,
    conv2d,
    leaky_relu,
    sigmoid,
    transposed_conv2d,
)

KERNEL_SIZE = 5
STRIDE = 2
PADDING = 2
SLOPE = 0.2

Params = Dict[str, Parameter]


@dataclass(frozen=True)
class ArchitectureSpec:
    latent_channels: int
    hidden_channels: int = 256
    input_channels: int = 3
    downsample_factor: int = 8
    posterior_head: bool = False

    def __post_init__(self):
        if self.latent_channels < 1:
            raise ValueError(f"latent_channels must be positive, got {self.latent_channels}")
        if self.hidden_channels < self.latent_channels:
            raise ValueError(f"hidden_channels ({self.hidden_channels}) must be at least "
                             f"latent_channels ({self.latent_channels})")
        if self.input_channels < 1:
            raise ValueError(f"input_channels must be positive, got {self.input_channels}")
        f = self.downsample_factor
        if f < 2 or f & (f - 1):
            raise ValueError(f"downsample_factor must be a power of two >= 2, got {f}")

    @property
    def num_layers(self) -> int:
        return int(math.log2(self.downsample_factor))

    def channel_plan(self) -> list[int]:
        """Encoder channel counts, image to latent."""
        n = self.num_layers
        hidden = [max(1, self.hidden_channels >> (n - 2 - i)) for i in range(n - 1)]
        return [self.input_channels, *hidden, self.latent_channels]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LatentTensor:
    values: Tensor
    quantized: bool = False

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def numpy(self) -> np.ndarray:
        return self.values.data


def init_params(spec: ArchitectureSpec, seed: int = 0, dtype=np.float32) -> Params:
    """Uniform(+-sqrt(1/fan_in)) weights and zero biases.

    For a transposed layer, fan_in counts the inputs that reach one output
    pixel, ``in_channels * K * K / stride**2``.
    """
    rng = np.random.default_rng(seed)
    k = KERNEL_SIZE
    plan = spec.channel_plan()
    params: Params = {}

    def uniform(shape, fan_in):
        bound = math.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    for i, (cin, cout) in enumerate(zip(plan[:-1], plan[1:])):
        params[f"enc{i}.weight"] = Parameter(uniform((cout, cin, k, k), cin * k * k), name=f"enc{i}.weight")
        params[f"enc{i}.bias"] = Parameter(np.zeros(cout, dtype), name=f"enc{i}.bias")
    if spec.posterior_head:
        cin, cout = plan[-2], plan[-1]
        params["enc.logvar.weight"] = Parameter(uniform((cout, cin, k, k), cin * k * k), name="enc.logvar.weight")
        params["enc.logvar.bias"] = Parameter(np.zeros(cout, dtype), name="enc.logvar.bias")

    rev = plan[::-1]
    for i, (cin, cout) in enumerate(zip(rev[:-1], rev[1:])):
        fan_in = cin * k * k / STRIDE ** 2
        params[f"dec{i}.weight"] = Parameter(uniform((cin, cout, k, k), fan_in), name=f"dec{i}.weight")
        params[f"dec{i}.bias"] = Parameter(np.zeros(cout, dtype), name=f"dec{i}.bias")
    return params


def _bias(t: Tensor, b: Parameter) -> Tensor:
    return t + b.reshape(1, -1, 1, 1)


def _check_image(image: Tensor, spec: ArchitectureSpec) -> None:
    if image.ndim != 4:
        raise ShapeError(f"expected an N x C x H x W image batch, got shape {image.shape}")
    n, c, h, w = image.shape
    if c != spec.input_channels:
        raise ShapeError(f"expected {spec.input_channels} channels, got shape {image.shape}")
    f = spec.downsample_factor
    if h % f or w % f:
        raise ShapeError(f"image extents {h}x{w} must be divisible by the downsample factor {f}")


def _encoder_trunk(image: Tensor, spec: ArchitectureSpec, params: Params) -> Tensor:
    h = image
    for i in range(spec.num_layers - 1):
        h = conv2d(h, params[f"enc{i}.weight"], STRIDE, PADDING)
        h = leaky_relu(_bias(h, params[f"enc{i}.bias"]), SLOPE)
    return h


def encode(image: Tensor, spec: ArchitectureSpec, params: Params) -> LatentTensor:
    """Continuous latent f(x) of an image batch with pixels in [0, 1]."""
    if not isinstance(image, Tensor):
        image = Tensor(image)
    _check_image(image, spec)
    last = spec.num_layers - 1
    h = _encoder_trunk(image, spec, params)
    z = _bias(conv2d(h, params[f"enc{last}.weight"], STRIDE, PADDING), params[f"enc{last}.bias"])
    return LatentTensor(z, quantized=False)


def encode_posterior(image: Tensor, spec: ArchitectureSpec, params: Params) -> tuple[Tensor, Tensor]:
    """Mean and log-variance of the diagonal Gaussian posterior head."""
    if not spec.posterior_head:
        raise ValueError("architecture has no Gaussian posterior head")
    if not isinstance(image, Tensor):
        image = Tensor(image)
    _check_image(image, spec)
    last = spec.num_layers - 1
    h = _encoder_trunk(image, spec, params)
    mean = _bias(conv2d(h, params[f"enc{last}.weight"], STRIDE, PADDING), params[f"enc{last}.bias"])
    logvar = _bias(conv2d(h, params["enc.logvar.weight"], STRIDE, PADDING), params["enc.logvar.bias"])
    return mean, logvar


def decode(latent, spec: ArchitectureSpec, params: Params) -> Tensor:
    """Reconstruction g(z) with pixels in (0, 1); takes quantized or continuous latents."""
    z = latent.values if isinstance(latent, LatentTensor) else latent
    if not isinstance(z, Tensor):
        z = Tensor(z)
    if z.ndim != 4 or z.shape[1] != spec.latent_channels:
        raise ShapeError(f"expected an N x {spec.latent_channels} x h x w latent, got shape {z.shape}")
    h = z
    n = spec.num_layers
    for i in range(n):
        h = transposed_conv2d(h, params[f"dec{i}.weight"], STRIDE, PADDING, output_padding=1)
        h = _bias(h, params[f"dec{i}.bias"])
        h = leaky_relu(h, SLOPE) if i < n - 1 else sigmoid(h)
    return h


def round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def quantize(latent: LatentTensor) -> LatentTensor:
    """Round to the nearest integer, ties away from zero."""
    if latent.quantized:
        return latent
    return LatentTensor(Tensor(round_half_away(latent.values.data)), quantized=True)
