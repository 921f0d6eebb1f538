"""The ``NVC1`` compressed-image container.

Fixed 57-byte little-endian header followed by the range-coder payload::

    offset size field
         0    4 magic "NVC1"
         4    2 version (u16)
         6   32 model_id (SHA-256 digest of the checkpoint)
        38    4 width (u32, true extent before padding)
        42    4 height (u32)
        46    1 channels (u8)
        47    2 latent_channels (u16)
        49    8 payload_bit_length (u64)
        57    - payload
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import ContainerError, VersionMismatch

MAGIC = b"NVC1"
VERSION = 1
HEADER = struct.Struct("<4sH32sIIBHQ")
HEADER_SIZE = HEADER.size
HEADER_BITS = 8 * HEADER_SIZE


@dataclass(frozen=True)
class CodedImage:
    model_id: bytes
    width: int
    height: int
    channels: int
    latent_channels: int
    payload: bytes
    payload_bit_length: int = -1
    version: int = VERSION

    def __post_init__(self):
        if self.payload_bit_length < 0:
            object.__setattr__(self, "payload_bit_length", 8 * len(self.payload))
        if len(self.model_id) != 32:
            raise ValueError(f"model_id must be 32 bytes, got {len(self.model_id)}")

    @property
    def total_bits(self) -> int:
        return HEADER_BITS + 8 * len(self.payload)

    def header_dict(self) -> dict:
        return {
            "magic": MAGIC.decode(),
            "version": self.version,
            "model_id": self.model_id.hex(),
            "width": self.width,
            "height": self.height,
            "channels": self.channels,
            "latent_channels": self.latent_channels,
            "payload_bit_length": self.payload_bit_length,
        }

    def to_bytes(self) -> bytes:
        header = HEADER.pack(MAGIC, self.version, self.model_id, self.width, self.height,
                             self.channels, self.latent_channels, self.payload_bit_length)
        return header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodedImage":
        if len(data) < HEADER_SIZE:
            raise ContainerError(f"file too short for a container header: {len(data)} of {HEADER_SIZE} bytes")
        magic, version, model_id, width, height, channels, latent, bit_length = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ContainerError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise VersionMismatch(f"container version {version} is not supported (expected {VERSION})")
        payload = data[HEADER_SIZE:]
        available = 8 * len(payload)
        if available < bit_length:
            raise ContainerError(f"payload truncated: expected {bit_length} bits, {available} available")
        if bit_length % 8 or available != bit_length:
            raise ContainerError(f"payload length mismatch: header says {bit_length} bits, file holds {available}")
        if width < 1 or height < 1 or channels < 1 or latent < 1:
            raise ContainerError(f"invalid header extents {width}x{height}x{channels}, latent {latent}")
        return cls(model_id, width, height, channels, latent, bytes(payload), bit_length, version)
