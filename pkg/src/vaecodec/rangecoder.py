"""32-bit range coder over 16-bit frequency tables.

Pure integer arithmetic, byte-wise renormalisation and carry propagation
through a pending-byte counter. A symbol with cumulative frequency ``c`` and
frequency ``f`` narrows the range ``r`` to
``[r*c >> 16, r*(c+f) >> 16)``, so no precision is lost to a pre-divided range.

Stream layout: the byte sequence emitted by the encoder, with the always-zero
leading carry byte omitted and the final 32-bit ``low`` flushed in full. The
decoder consumes exactly every byte; a short stream or trailing bytes are
errors.

Out-of-support values are coded as the table's escape symbol followed by the
value as a 32-bit two's-complement integer in two uniform 16-bit chunks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .entropy import ESCAPE_RAW_BITS, CmfTable

PRECISION = 16
_TOP = 1 << 24
_FULL_RANGE = 0xFFFFFFFF

_OK, _TRUNCATED, _CORRUPT, _TRAILING = 0, 1, 2, 3


class RangeDecodeError(ValueError):
    """The stream is truncated, corrupt, or does not match the tables."""


@dataclass(frozen=True)
class Bitstream:
    data: bytes
    bit_length: int

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        return cls(bytes(data), 8 * len(data))

    def __len__(self) -> int:
        return len(self.data)


@njit(cache=True)
def _shift_low(st, out):
    # st: low, range, cache, cache_size, write position, leading byte pending
    low = st[0]
    if low < 0xFF000000 or low >= 0x100000000:
        carry = low >> 32
        temp = st[2]
        while True:
            if st[5] == 1:
                st[5] = 0
            else:
                out[st[4]] = (temp + carry) & 0xFF
                st[4] += 1
            temp = 0xFF
            st[3] -= 1
            if st[3] == 0:
                break
        st[2] = (low >> 24) & 0xFF
    st[3] += 1
    st[0] = (low & 0x00FFFFFF) << 8


@njit(cache=True)
def _encode_interval(st, out, cum, freq):
    r = st[1]
    lo = (r * cum) >> 16
    hi = (r * (cum + freq)) >> 16
    st[0] += lo
    r = hi - lo
    while r < 16777216:
        r <<= 8
        _shift_low(st, out)
    st[1] = r


@njit(cache=True)
def _encode_kernel(tab, idx, esc, raw, cdf_flat, offsets, out):
    st = np.zeros(6, dtype=np.int64)
    st[1] = 0xFFFFFFFF
    st[3] = 1
    st[5] = 1
    for i in range(tab.shape[0]):
        base = offsets[tab[i]] + idx[i]
        cum = cdf_flat[base]
        _encode_interval(st, out, cum, cdf_flat[base + 1] - cum)
        if esc[i]:
            _encode_interval(st, out, (raw[i] >> 16) & 0xFFFF, 1)
            _encode_interval(st, out, raw[i] & 0xFFFF, 1)
    for _ in range(5):
        _shift_low(st, out)
    return st[4]


@njit(cache=True)
def _decode_kernel(data, tab, cdf_flat, offsets, nsyms, smins, out):
    n_bytes = data.shape[0]
    if n_bytes < 4:
        return _TRUNCATED, 0
    code = (np.int64(data[0]) << 24) | (np.int64(data[1]) << 16) | (np.int64(data[2]) << 8) | np.int64(data[3])
    pos = 4
    r = np.int64(0xFFFFFFFF)
    for i in range(tab.shape[0]):
        t = tab[i]
        base = offsets[t]
        ns = nsyms[t]
        value = np.int64(0)
        raw = np.int64(0)
        # one table symbol, then two raw chunks if it was the escape
        n_steps = 1
        step = 0
        while step < n_steps:
            if code >= r:
                return _CORRUPT, i
            if step == 0:
                lo_j = 0
                hi_j = ns
                while hi_j - lo_j > 1:
                    mid = (lo_j + hi_j) >> 1
                    if (r * cdf_flat[base + mid]) >> 16 <= code:
                        lo_j = mid
                    else:
                        hi_j = mid
                cum = cdf_flat[base + lo_j]
                nxt = cdf_flat[base + lo_j + 1]
                if lo_j == ns - 1:
                    n_steps = 3
                else:
                    value = smins[t] + lo_j
            else:
                chunk = ((code + 1) * 65536 - 1) // r
                if chunk > 0xFFFF:
                    chunk = 0xFFFF
                cum = chunk
                nxt = chunk + 1
                raw = (raw << 16) | chunk
            lo = (r * cum) >> 16
            hi = (r * nxt) >> 16
            code -= lo
            r = hi - lo
            while r < 16777216:
                if pos >= n_bytes:
                    return _TRUNCATED, i
                code = (code << 8) | np.int64(data[pos])
                pos += 1
                r <<= 8
            step += 1
        if n_steps == 3:
            value = raw - 4294967296 if raw >= 2147483648 else raw
        out[i] = value
    if pos != n_bytes:
        return _TRAILING, tab.shape[0]
    return _OK, tab.shape[0]


def _pack_tables(tables: Sequence[CmfTable]):
    if not tables:
        raise ValueError("at least one table is required")
    for t in tables:
        if t.precision_bits != PRECISION:
            raise ValueError(f"range coder needs {PRECISION}-bit tables, got {t.precision_bits}")
    sizes = np.array([t.num_symbols for t in tables], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes + 1)[:-1]]).astype(np.int64)
    cdf_flat = np.concatenate([t.cdf for t in tables]).astype(np.int64)
    smins = np.array([t.support_min for t in tables], dtype=np.int64)
    return cdf_flat, offsets, sizes, smins


def _assignment(tables: Sequence[CmfTable], assignment, count: int) -> np.ndarray:
    if assignment is None:
        if len(tables) != 1:
            raise ValueError("an assignment is required when more than one table is given")
        return np.zeros(count, dtype=np.int64)
    assignment = np.asarray(assignment, dtype=np.int64).ravel()
    if assignment.shape != (count,):
        raise ValueError(f"assignment has {assignment.size} entries for {count} symbols")
    if count and (assignment.min() < 0 or assignment.max() >= len(tables)):
        raise ValueError("assignment refers to a table that does not exist")
    return assignment


def _escape_plan(symbols: np.ndarray, tab: np.ndarray, sizes: np.ndarray, smins: np.ndarray):
    idx = symbols - smins[tab]
    esc_index = sizes[tab] - 1
    esc = (idx < 0) | (idx >= esc_index)
    idx = np.where(esc, esc_index, idx)
    return idx, esc


def encode_symbols(symbols, tables: Sequence[CmfTable], assignment=None) -> Bitstream:
    """Range-code integer ``symbols``; symbol ``i`` uses ``tables[assignment[i]]``."""
    if isinstance(tables, CmfTable):
        tables = [tables]
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    tab = _assignment(tables, assignment, symbols.size)
    cdf_flat, offsets, sizes, smins = _pack_tables(tables)
    idx, esc = _escape_plan(symbols, tab, sizes, smins)
    if esc.any():
        outliers = symbols[esc]
        bad = outliers[(outliers < -(1 << 31)) | (outliers >= (1 << 31))]
        if bad.size:
            raise ValueError(f"value {int(bad[0])} does not fit the {ESCAPE_RAW_BITS}-bit escape payload")
    raw = np.where(esc, symbols & 0xFFFFFFFF, 0).astype(np.int64)
    out = np.zeros(9 * symbols.size + 8, dtype=np.uint8)
    n = _encode_kernel(tab, idx.astype(np.int64), esc, raw, cdf_flat, offsets, out)
    return Bitstream.from_bytes(out[:n].tobytes())


def decode_symbols(stream, tables: Sequence[CmfTable], count: int, assignment=None) -> np.ndarray:
    """Inverse of :func:`encode_symbols` given the same tables and assignment."""
    if isinstance(tables, CmfTable):
        tables = [tables]
    data = stream.data if isinstance(stream, Bitstream) else bytes(stream)
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    tab = _assignment(tables, assignment, count)
    cdf_flat, offsets, sizes, smins = _pack_tables(tables)
    out = np.zeros(count, dtype=np.int64)
    buf = np.frombuffer(data, dtype=np.uint8)
    status, where = _decode_kernel(buf, tab, cdf_flat, offsets, sizes, smins, out)
    if status == _TRUNCATED:
        raise RangeDecodeError(f"stream truncated: {len(data)} bytes ran out at symbol {where} of {count}")
    if status == _CORRUPT:
        raise RangeDecodeError(f"stream corrupt at symbol {where} of {count}")
    if status == _TRAILING:
        raise RangeDecodeError(f"stream has trailing bytes after {count} symbols")
    return out


def ideal_bits(symbols, tables: Sequence[CmfTable], assignment=None) -> float:
    """Sum of -log2 q over the symbols, escape payloads included."""
    if isinstance(tables, CmfTable):
        tables = [tables]
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    tab = _assignment(tables, assignment, symbols.size)
    cdf_flat, offsets, sizes, smins = _pack_tables(tables)
    idx, esc = _escape_plan(symbols, tab, sizes, smins)
    freqs = cdf_flat[offsets[tab] + idx + 1] - cdf_flat[offsets[tab] + idx]
    bits = -np.log2(freqs / float(1 << PRECISION))
    return float(bits.sum() + ESCAPE_RAW_BITS * esc.sum())
