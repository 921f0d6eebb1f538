"""Properties that need a fully trained desk model (shared with the acceptance cache)."""

import math

import numpy as np
import pytest

from vaecodec.codec import evaluate_images, quantized_latent, reconstruct
from vaecodec.engine import Tensor, no_grad
from vaecodec.entropy import add_uniform_noise, rate_bits
from vaecodec.io.images import pad_to_multiple
from vaecodec.model import CodecModel

import acceptance_models as am

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def sweep_models():
    return am.latent_sweep()[1]


@pytest.fixture(scope="module")
def model32(sweep_models):
    return sweep_models[32][0]


@pytest.fixture(scope="module")
def held_out():
    return am.held_out_images()


def noisy_and_rounded(model, images, seed=0):
    """Totals of estimated bits and mean MSE under the noisy and the rounded latent."""
    bits = {"noisy": 0.0, "rounded": 0.0}
    errs = {"noisy": [], "rounded": []}
    with no_grad():
        for i, (_, image) in enumerate(images):
            x = Tensor(pad_to_multiple(image, 8)[None])
            z = model.encode(x).values
            latents = {"noisy": add_uniform_noise(z, seed + i), "rounded": quantized_latent(model, image).values}
            for kind, lat in latents.items():
                bits[kind] += rate_bits(lat, model.prior).item()
                recon = model.decode(lat).data
                errs[kind].append(np.mean((recon - x.data) ** 2))
    return bits, {k: float(np.mean(v)) for k, v in errs.items()}


def test_noisy_rate_tracks_rounded_rate(model32, held_out):
    bits, _ = noisy_and_rounded(model32, held_out)
    assert abs(bits["noisy"] - bits["rounded"]) <= 0.05 * bits["rounded"]


def test_rounding_distortion_tracks_noise_distortion(model32, held_out):
    _, errs = noisy_and_rounded(model32, held_out)
    assert abs(errs["rounded"] - errs["noisy"]) <= 0.2 * errs["noisy"]


def test_rounded_and_noisy_reconstructions_differ(model32, held_out):
    image = held_out[0][1]
    with no_grad():
        z = model32.encode(Tensor(image[None])).values
        noisy = model32.decode(add_uniform_noise(z, 0)).data[0]
    assert not np.array_equal(noisy, reconstruct(model32, image))


def test_training_trajectory(model32):
    rows = model32.telemetry
    assert len(rows) == am.SWEEP_BASE.steps
    head, tail = rows[:50], rows[-50:]
    assert np.mean([r["mse"] for r in tail]) < np.mean([r["mse"] for r in head])
    assert np.mean([r["rate_bpp"] for r in tail]) < np.mean([r["rate_bpp"] for r in head])


def test_telemetry_finite(sweep_models):
    for model, _ in sweep_models.values():
        assert all(math.isfinite(v) for r in model.telemetry for v in r.values())


def test_trained_beats_untrained_ssim(model32, held_out):
    untrained = CodecModel.initialize(model32.spec, seed=am.SWEEP_BASE.seed)
    _, before = evaluate_images(untrained, held_out)
    _, after = evaluate_images(model32, held_out)
    assert after.ssim > before.ssim
    assert after.psnr > before.psnr


def test_trained_models_are_distinct(sweep_models):
    digests = {d for _, d in sweep_models.values()}
    assert len(digests) == len(sweep_models)
