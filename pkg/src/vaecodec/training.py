"""Rate-distortion training, the beta-VAE diagnostic mode and latent-width sweeps."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .codec import evaluate_images
from .engine import Tensor, adam_step, backward, mse
from .entropy import FactorizedPrior, add_uniform_noise, rate_bits
from .model import CodecModel
from .vae import ArchitectureSpec, decode, encode, encode_posterior

log = logging.getLogger(__name__)

LOSS_MODES = ("rate_distortion", "beta_vae")
PAPER_LATENT_GRID = (4, 8, 16, 32, 64, 128)


@dataclass(frozen=True)
class TrainConfig:
    lmbda: float = 0.001
    latent_channels: int = 32
    hidden_channels: int = 256
    patch_size: int = 64
    batch_size: int = 16
    steps: int = 2000
    learning_rate: float = 1e-3
    seed: int = 0
    loss_mode: str = "rate_distortion"
    input_channels: int = 3
    downsample_factor: int = 8

    def __post_init__(self):
        if self.lmbda < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lmbda}")
        if self.patch_size % self.downsample_factor:
            raise ValueError(f"patch_size {self.patch_size} must be divisible by "
                             f"the downsample factor {self.downsample_factor}")
        for name in ("latent_channels", "hidden_channels", "patch_size", "batch_size", "steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")

    def architecture(self) -> ArchitectureSpec:
        return ArchitectureSpec(self.latent_channels, self.hidden_channels, self.input_channels,
                                self.downsample_factor, posterior_head=self.loss_mode == "beta_vae")


@dataclass(frozen=True)
class RDPoint:
    latent_channels: int
    bpp: float
    mse: float
    psnr: float
    ssim: float


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, components: dict):
        self.step = step
        self.components = components
        detail = ", ".join(f"{k}={v!r}" for k, v in components.items())
        super().__init__(f"non-finite loss at step {step}: {detail}")


class SweepError(RuntimeError):
    pass


def _rd_terms(original: Tensor, reconstruction: Tensor, noisy_latent: Tensor,
              prior: FactorizedPrior, lmbda: float) -> tuple[Tensor, Tensor, Tensor]:
    if original.shape != reconstruction.shape:
        raise ValueError(f"original {original.shape} and reconstruction {reconstruction.shape} differ")
    if lmbda < 0:
        raise ValueError(f"lambda must be non-negative, got {lmbda}")
    n, _, h, w = original.shape
    distortion = mse(reconstruction, original)
    rate = rate_bits(noisy_latent, prior) * (1.0 / (n * h * w))
    return distortion + rate * lmbda, distortion, rate


def rd_loss(original: Tensor, reconstruction: Tensor, noisy_latent: Tensor,
            prior: FactorizedPrior, lmbda: float) -> Tensor:
    """MSE + lambda * (rate bits per image pixel)."""
    return _rd_terms(original, reconstruction, noisy_latent, prior, lmbda)[0]


def gaussian_kl(mean: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mean, exp(logvar)) || N(0, 1)) summed over all entries, in nats."""
    return (mean.square() + logvar.exp() - 1.0 - logvar).sum() * 0.5


def beta_vae_loss(original: Tensor, reconstruction: Tensor, posterior_params: tuple[Tensor, Tensor],
                  lmbda: float, mode: str = "beta_vae") -> Tensor:
    """MSE + lambda * KL(posterior || unit Gaussian) per image pixel.

    Only meaningful for models trained with the Gaussian posterior head.
    """
    if mode != "beta_vae":
        raise ValueError(f"beta_vae_loss is only available in beta_vae mode, not {mode!r}")
    if original.shape != reconstruction.shape:
        raise ValueError(f"original {original.shape} and reconstruction {reconstruction.shape} differ")
    mean, logvar = posterior_params
    n, _, h, w = original.shape
    return mse(reconstruction, original) + gaussian_kl(mean, logvar) * (lmbda / (n * h * w))


def _step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def train(config: TrainConfig, dataset, telemetry: Optional[str | Path] = None,
          progress: Optional[Callable[[dict], None]] = None, log_every: int = 100) -> CodecModel:
    """Train a codec from scratch; fully determined by ``config`` and ``dataset``.

    ``dataset`` provides ``batch(rng, batch_size)`` returning N x C x P x P
    float32 patches in [0, 1]. Per-step rows (step, loss, mse, rate_bpp) are
    kept on ``model.telemetry`` and appended to the ``telemetry`` CSV if given.
    """
    spec = config.architecture()
    model = CodecModel.initialize(spec, seed=config.seed)
    beta = config.loss_mode == "beta_vae"
    params = model.network_parameters() if beta else model.parameters()
    rng = np.random.default_rng([config.seed, 1])

    writer = fh = None
    if telemetry is not None:
        path = Path(telemetry)
        fresh = not path.exists() or path.stat().st_size == 0
        fh = open(path, "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["step", "loss", "mse", "rate_bpp"])

    try:
        for step in range(config.steps):
            batch = dataset.batch(rng, config.batch_size)
            if batch.shape[1:] != (spec.input_channels, config.patch_size, config.patch_size):
                raise ValueError(f"dataset produced batch {batch.shape}, expected patches of "
                                 f"{spec.input_channels}x{config.patch_size}x{config.patch_size}")
            x = Tensor(batch)
            noise_seed = _step_seed(config.seed, step)
            if beta:
                mean, logvar = encode_posterior(x, spec, model.params)
                eps = np.random.default_rng(noise_seed).standard_normal(mean.shape).astype(mean.dtype)
                z = mean + (logvar * 0.5).exp() * Tensor(eps)
                x_hat = decode(z, spec, model.params)
                loss = beta_vae_loss(x, x_hat, (mean, logvar), config.lmbda)
                distortion = mse(x_hat, x)
                rate = gaussian_kl(mean, logvar) * (1.0 / (math.log(2.0) * batch.shape[0] * batch.shape[2] * batch.shape[3]))
            else:
                z = encode(x, spec, model.params).values
                noisy = add_uniform_noise(z, noise_seed)
                x_hat = decode(noisy, spec, model.params)
                loss, distortion, rate = _rd_terms(x, x_hat, noisy, model.prior, config.lmbda)

            row = {"step": step, "loss": loss.item(), "mse": distortion.item(), "rate_bpp": rate.item()}
            if not all(math.isfinite(v) for v in row.values()):
                raise TrainingDiverged(step, {k: v for k, v in row.items() if k != "step"})
            backward(loss)
            adam_step(params, lr=config.learning_rate)
            for p in params:
                p.grad = None

            model.telemetry.append(row)
            if writer is not None:
                writer.writerow([step, repr(row["loss"]), repr(row["mse"]), repr(row["rate_bpp"])])
            if progress is not None:
                progress(row)
            if log_every and step % log_every == 0:
                log.info("step %d loss %.6f mse %.6f rate %.4f bpp", step, row["loss"], row["mse"], row["rate_bpp"])
    finally:
        if fh is not None:
            fh.close()

    model.metadata = {
        "lambda": config.lmbda, "steps": config.steps, "seed": config.seed,
        "batch_size": config.batch_size, "patch_size": config.patch_size,
        "learning_rate": config.learning_rate, "loss_mode": config.loss_mode,
    }
    return model


def write_rd_csv(path, points: Sequence[RDPoint]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["latent_channels", "bpp", "mse", "psnr", "ssim"])
        for p in points:
            writer.writerow([p.latent_channels, repr(p.bpp), repr(p.mse), repr(p.psnr), repr(p.ssim)])


def sweep(base_config: TrainConfig, latent_grid: Sequence[int], dataset,
          eval_set: Sequence[tuple[str, np.ndarray]], csv_path=None,
          on_model: Optional[Callable[[int, CodecModel], None]] = None) -> list[RDPoint]:
    """Train one model per latent width (same seed and budget) and score each.

    Scores come from real coded bitstreams over ``eval_set``. One RDPoint per
    grid value, in grid order.
    """
    if not latent_grid:
        raise ValueError("latent grid is empty")
    points = []
    for latent in latent_grid:
        try:
            config = replace(base_config, latent_channels=int(latent))
            model = train(config, dataset, log_every=0)
        except Exception as exc:
            raise SweepError(f"grid point latent_channels={latent} failed: {exc}") from exc
        if on_model is not None:
            on_model(int(latent), model)
        _, mean = evaluate_images(model, eval_set)
        points.append(RDPoint(int(latent), mean.bpp, mean.mse, mean.psnr, mean.ssim))
        log.info("latent %d: %.3f bpp, mse %.6f, psnr %.2f dB, ssim %.4f", *asdict(points[-1]).values())
    if csv_path is not None:
        write_rd_csv(csv_path, points)
    return points
