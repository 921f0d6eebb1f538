"""A trained (or freshly initialised) codec: architecture, weights and prior."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import vae
from .engine import Parameter, Tensor
from .entropy import FactorizedPrior
from .vae import ArchitectureSpec, LatentTensor


class CodecModel:
    """Encoder/decoder parameters plus the factorized prior over latents.

    ``metadata`` carries training settings (lambda, steps, seed, ...) and is
    serialized with the checkpoint. ``telemetry`` holds per-step training rows
    and is not serialized.
    """

    def __init__(self, spec: ArchitectureSpec, params: dict, prior: FactorizedPrior,
                 metadata: Optional[dict] = None):
        if prior.channels != spec.latent_channels:
            raise ValueError(f"prior has {prior.channels} channels, architecture has {spec.latent_channels}")
        self.spec = spec
        self.params = params
        self.prior = prior
        self.metadata = dict(metadata or {})
        self.telemetry: list = []

    @classmethod
    def initialize(cls, spec: ArchitectureSpec, seed: int = 0, dtype=np.float32) -> "CodecModel":
        return cls(spec, vae.init_params(spec, seed, dtype), FactorizedPrior(spec.latent_channels, dtype))

    def network_parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def parameters(self) -> list[Parameter]:
        return self.network_parameters() + self.prior.parameters()

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every learned array in canonical (serialization) order."""
        items = [(name, p.data) for name, p in self.params.items()]
        items.append(("prior.location", self.prior.location.data))
        items.append(("prior.log_scale", self.prior.log_scale.data))
        return items

    def astype(self, dtype) -> "CodecModel":
        params = {k: Parameter(p.data.astype(dtype), name=k) for k, p in self.params.items()}
        return CodecModel(self.spec, params, self.prior.astype(dtype), self.metadata)

    @property
    def dtype(self):
        return self.prior.location.dtype

    def encode(self, image) -> LatentTensor:
        return vae.encode(image, self.spec, self.params)

    def decode(self, latent) -> Tensor:
        return vae.decode(latent, self.spec, self.params)

    def __repr__(self) -> str:
        s = self.spec
        return (f"CodecModel(latent_channels={s.latent_channels}, hidden_channels={s.hidden_channels}, "
                f"input_channels={s.input_channels}, downsample_factor={s.downsample_factor})")
