"""Versioned binary checkpoint format.

Layout (all integers little-endian)::

    b"NVCK" | u16 version | u32 header_len | header (UTF-8 JSON, sorted keys)
    | raw little-endian tensor bytes, in header order | 32-byte SHA-256

The digest covers every preceding byte, so any change to the architecture,
weights, prior or training metadata yields a different model id.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..engine import Parameter
from ..entropy import FactorizedPrior
from ..model import CodecModel
from ..vae import ArchitectureSpec
from .errors import CheckpointError

MAGIC = b"NVCK"
VERSION = 1
DIGEST_SIZE = 32
_PREFIX = struct.Struct("<4sHI")


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(model: CodecModel) -> bytes:
    tensors, blobs = [], []
    for name, arr in model.named_arrays():
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str})
        blobs.append(le.tobytes())
    header = _canonical_json({
        "architecture": model.spec.to_dict(),
        "tensors": tensors,
        "training": model.metadata,
    })
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: CodecModel, path: Union[str, Path]) -> bytes:
    """Write ``model`` to ``path`` and return its 32-byte digest."""
    data = checkpoint_bytes(model)
    Path(path).write_bytes(data)
    return data[-DIGEST_SIZE:]


def model_digest(model: CodecModel) -> bytes:
    return checkpoint_bytes(model)[-DIGEST_SIZE:]


def _parse_header(data: bytes) -> tuple[dict, int]:
    if len(data) < _PREFIX.size + DIGEST_SIZE:
        raise CheckpointError(f"checkpoint too short ({len(data)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint: magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    start = _PREFIX.size
    if start + header_len > len(data) - DIGEST_SIZE:
        raise CheckpointError("checkpoint header runs past the end of the file")
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint header is not valid JSON: {exc}") from None
    return header, start + header_len


def read_checkpoint_header(data: bytes) -> dict:
    """Header fields plus the stored digest, without validating the digest."""
    header, _ = _parse_header(data)
    header = dict(header)
    header["version"] = VERSION
    header["digest"] = data[-DIGEST_SIZE:].hex()
    return header


def load_checkpoint_bytes(data: bytes) -> tuple[CodecModel, bytes]:
    """Parse and verify a checkpoint; returns the model and its digest."""
    header, offset = _parse_header(data)
    body, stored = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != stored:
        raise CheckpointError("checkpoint digest mismatch: the file is corrupt or was modified")
    try:
        spec = ArchitectureSpec(**header["architecture"])
        arrays = {}
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64))
            nbytes = count * dtype.itemsize
            if offset + nbytes > len(body):
                raise CheckpointError(f"tensor {entry['name']} runs past the end of the checkpoint")
            arr = np.frombuffer(body, dtype=dtype, count=count, offset=offset).reshape(entry["shape"])
            arrays[entry["name"]] = arr.astype(dtype.newbyteorder("="))
            offset += nbytes
        if offset != len(body):
            raise CheckpointError("checkpoint has unexpected trailing bytes")
        loc = arrays.pop("prior.location")
        log_scale = arrays.pop("prior.log_scale")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from None

    prior = FactorizedPrior(spec.latent_channels, loc.dtype, loc, log_scale)
    params = {name: Parameter(arr, name=name) for name, arr in arrays.items()}
    model = CodecModel(spec, params, prior, header.get("training", {}))
    return model, stored


def load_checkpoint(path: Union[str, Path]) -> tuple[CodecModel, bytes]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    return load_checkpoint_bytes(data)
