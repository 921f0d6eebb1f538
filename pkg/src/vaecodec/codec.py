"""End-to-end compression: image -> quantized latent -> range-coded container.

Pipeline on the way in: pad to the downsample factor, encode, round, freeze
the prior into coding tables, range-code the symbols channel-major then
row-major, wrap in an ``NVC1`` container. Decompression inverts the coder
exactly, so the only loss is the autoencoder's.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .engine import Tensor, no_grad
from .entropy import freeze_cmf
from .io.checkpoint import load_checkpoint, model_digest
from .io.container import CodedImage
from .io.errors import ContainerError, ImageReadError, ModelKeyError
from .io.images import list_images, load_image, load_images, pad_to_multiple, save_image, to_uint8
from .metrics import bpp, mse, psnr_from_mse, ssim
from .model import CodecModel
from .rangecoder import RangeDecodeError, decode_symbols, encode_symbols, ideal_bits
from .vae import LatentTensor, quantize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompressSummary:
    width: int
    height: int
    latent_shape: tuple
    payload_bits: int
    total_bits: int
    ideal_payload_bits: float
    escapes: int
    bpp: float


@dataclass(frozen=True)
class EvalRow:
    name: str
    bpp: float
    mse: float
    psnr: float
    ssim: float


def resolve_model(checkpoint) -> tuple[CodecModel, bytes]:
    """Accept a checkpoint path, a ``(model, digest)`` pair or a bare model."""
    if isinstance(checkpoint, (str, Path)):
        return load_checkpoint(checkpoint)
    if isinstance(checkpoint, tuple):
        return checkpoint
    return checkpoint, model_digest(checkpoint)


def _symbol_layout(model: CodecModel, latent_hw: tuple[int, int]) -> np.ndarray:
    h, w = latent_hw
    return np.repeat(np.arange(model.spec.latent_channels, dtype=np.int64), h * w)


def quantized_latent(model: CodecModel, image: np.ndarray) -> LatentTensor:
    """Rounded latent of one C x H x W image after padding."""
    padded = pad_to_multiple(np.asarray(image, dtype=model.dtype), model.spec.downsample_factor)
    with no_grad():
        return quantize(model.encode(Tensor(padded[None])))


def decode_latent(model: CodecModel, latent: np.ndarray, height: int, width: int) -> np.ndarray:
    """Reconstruction cropped to the true extents, as floats in (0, 1)."""
    with no_grad():
        out = model.decode(LatentTensor(Tensor(latent.astype(model.dtype)), quantized=True)).data
    return out[0, :, :height, :width]


def reconstruct(model: CodecModel, image: np.ndarray) -> np.ndarray:
    """In-memory encode -> round -> decode, without entropy coding."""
    _, h, w = image.shape
    return decode_latent(model, quantized_latent(model, image).values.data, h, w)


def compress_array(checkpoint, image: np.ndarray) -> tuple[CodedImage, CompressSummary]:
    model, digest = resolve_model(checkpoint)
    c, h, w = image.shape
    if c != model.spec.input_channels:
        raise ValueError(f"model expects {model.spec.input_channels} channels, image has {c}")
    latent = quantized_latent(model, image).values.data
    symbols = latent.astype(np.int64).ravel()
    assignment = _symbol_layout(model, latent.shape[2:])
    tables = freeze_cmf(model.prior)
    stream = encode_symbols(symbols, tables, assignment)
    coded = CodedImage(digest, w, h, c, model.spec.latent_channels, stream.data)
    lo = np.array([t.support_min for t in tables])[assignment]
    hi = np.array([t.support_max for t in tables])[assignment]
    escapes = int(np.sum((symbols < lo) | (symbols > hi)))
    summary = CompressSummary(
        width=w, height=h, latent_shape=tuple(latent.shape[1:]),
        payload_bits=stream.bit_length, total_bits=coded.total_bits,
        ideal_payload_bits=ideal_bits(symbols, tables, assignment), escapes=escapes,
        bpp=bpp(coded.total_bits, w, h),
    )
    return coded, summary


def decompress_array(checkpoint, coded: Union[CodedImage, bytes]) -> np.ndarray:
    """Decode a container to a C x H x W float image at its true extents."""
    model, digest = resolve_model(checkpoint)
    if not isinstance(coded, CodedImage):
        coded = CodedImage.from_bytes(coded)
    if coded.model_id != digest:
        raise ModelKeyError(f"file was coded with model {coded.model_id.hex()[:16]}..., "
                            f"checkpoint is {digest.hex()[:16]}...")
    spec = model.spec
    if coded.latent_channels != spec.latent_channels or coded.channels != spec.input_channels:
        raise ContainerError("container channel counts do not match the checkpoint")
    f = spec.downsample_factor
    lh, lw = -(-coded.height // f), -(-coded.width // f)
    assignment = _symbol_layout(model, (lh, lw))
    try:
        symbols = decode_symbols(coded.payload, freeze_cmf(model.prior), assignment.size, assignment)
    except RangeDecodeError as exc:
        raise ContainerError(f"payload does not decode: {exc}") from None
    latent = symbols.reshape(1, spec.latent_channels, lh, lw)
    return decode_latent(model, latent, coded.height, coded.width)


def compress_file(image_path, checkpoint, output_path) -> CompressSummary:
    image = load_image(image_path)
    coded, summary = compress_array(checkpoint, image)
    Path(output_path).write_bytes(coded.to_bytes())
    return summary


def read_container(path) -> CodedImage:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise ContainerError(f"{path}: no such file") from None
    return CodedImage.from_bytes(data)


def decompress_file(coded_path, checkpoint, output_path) -> dict:
    coded = read_container(coded_path)
    image = decompress_array(checkpoint, coded)
    save_image(output_path, image)
    return {"width": coded.width, "height": coded.height,
            "bpp": bpp(coded.total_bits, coded.width, coded.height)}


def evaluate_images(checkpoint, images: Sequence[tuple[str, np.ndarray]]) -> tuple[list[EvalRow], EvalRow]:
    """Compress, decompress and score each image; returns rows and their mean.

    Metrics compare the 8-bit original with the 8-bit reconstruction, the
    pixels a user would actually see.
    """
    model, digest = resolve_model(checkpoint)
    rows = []
    for name, image in images:
        coded, _ = compress_array((model, digest), image)
        recon = to_uint8(decompress_array((model, digest), coded.to_bytes())) / 255.0
        ref = to_uint8(image) / 255.0
        err = mse(ref, recon)
        rows.append(EvalRow(name, bpp(coded.total_bits, coded.width, coded.height), err,
                            psnr_from_mse(err), ssim(ref, recon)))
    if not rows:
        raise ImageReadError("no readable images to evaluate")
    mean = EvalRow("mean", *(float(np.mean([getattr(r, k) for r in rows])) for k in ("bpp", "mse", "psnr", "ssim")))
    return rows, mean


def write_eval_csv(path, rows: Sequence[EvalRow], mean: Optional[EvalRow] = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "bpp", "mse", "psnr", "ssim"])
        for r in [*rows, *([mean] if mean else [])]:
            writer.writerow([r.name, repr(r.bpp), repr(r.mse), repr(r.psnr), repr(r.ssim)])


def evaluate(image_dir, checkpoint, csv_path=None) -> tuple[list[EvalRow], EvalRow]:
    """Score every readable PNG/PPM image in ``image_dir``; unreadable files are skipped."""
    images = load_images(list_images(image_dir))
    if not images:
        raise ImageReadError(f"{image_dir}: no readable images")
    rows, mean = evaluate_images(checkpoint, images)
    if csv_path is not None:
        write_eval_csv(csv_path, rows, mean)
    return rows, mean
