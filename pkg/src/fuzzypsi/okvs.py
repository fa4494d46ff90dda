"""Oblivious key-value store over a random band matrix.

Encode solves a sparse GF(2) linear system: each key hashes (under a table
seed) to a band of ``BAND_WIDTH`` pseudorandom bits at a pseudorandom start
position inside a table of M cells, and the key's value must equal the XOR of
the cells its band selects.  Free cells are filled with randomness, so a table
encoding random values is itself uniform, and decoding an unencoded key yields
a seed-determined pseudorandom value.

Encoding fails only on a rank defect, in which case a fresh seed is drawn; the
table length includes enough slack that the retry loop terminating is never an
issue in practice.

Wire layout (the unit of communication accounting upstream):
``n_kv, M, band_width`` as little-endian u32, then the 16-byte seed, then the
cells, each trimmed to ceil(width/8) bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

from fuzzypsi._kernels import band_decode, band_eliminate, band_solve
from fuzzypsi.core import BinVec, CounterRng, _nbytes

BAND_WIDTH = 80
RATE_SMALL = 1.25
RATE_LARGE = 1.10
RATE_CUTOFF = 1 << 10
MAX_TRIES = 8
SEED_BYTES = 16

_GEOM = struct.Struct("<III")


class OkvsError(Exception):
    pass


class DuplicateKeysError(OkvsError):
    pass


class EncodeFailure(OkvsError):
    """Retry cap exhausted; statistically this indicates duplicate or adversarial keys."""


@dataclass(frozen=True)
class OkvsTable:
    seed: bytes
    cells: BinVec
    n_kv: int

    @property
    def m_cells(self) -> int:
        return len(self.cells)

    @property
    def width(self) -> int:
        return self.cells.width

    def to_bytes(self) -> bytes:
        return _GEOM.pack(self.n_kv, self.m_cells, BAND_WIDTH) + self.seed + self.cells.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes, width: int) -> "OkvsTable":
        n_kv, m_cells, w = _GEOM.unpack_from(data, 0)
        if w != BAND_WIDTH:
            raise OkvsError("unsupported band width on the wire")
        seed = data[_GEOM.size : _GEOM.size + SEED_BYTES]
        body = data[_GEOM.size + SEED_BYTES :]
        cells = BinVec.from_bytes(body, m_cells, width)
        return cls(seed, cells, n_kv)

    def wire_size(self) -> int:
        return _GEOM.size + SEED_BYTES + self.m_cells * _nbytes(self.width)


def table_length(n_kv: int) -> int:
    rate = RATE_SMALL if n_kv < RATE_CUTOFF else RATE_LARGE
    return int(np.ceil(rate * n_kv)) + BAND_WIDTH


def _as_rows(keys) -> tuple[int, object]:
    """Normalize keys to (count, iterable-of-buffers)."""
    if isinstance(keys, np.ndarray):
        if keys.ndim != 2 or keys.dtype != np.uint8:
            raise OkvsError("packed keys must be an (n, len) uint8 array")
        n = keys.shape[0]
        row_len = keys.shape[1]
        mv = memoryview(np.ascontiguousarray(keys)).cast("B")

        def rows():
            for i in range(n):
                yield mv[i * row_len : (i + 1) * row_len]

        return n, rows()
    return len(keys), iter(keys)


def _positions(keys, seed: bytes, m_cells: int):
    """Hash every key to (start, band) under the table seed.

    Each key is pre-hashed to 24 bytes; 8 choose the start cell and 80 form the
    band, whose first bit is forced to 1 so no row is empty.
    """
    n, rows = _as_rows(keys)
    span = m_cells - BAND_WIDTH + 1
    starts = np.empty(n, dtype=np.int64)
    b0 = np.empty(n, dtype=np.uint64)
    b1 = np.empty(n, dtype=np.uint64)
    buf = bytearray()
    for row in rows:
        buf += blake2b(row, digest_size=24, key=seed).digest()
    raw = np.frombuffer(bytes(buf), dtype="<u8").reshape(n, 3)
    starts[:] = (raw[:, 0] % np.uint64(span)).astype(np.int64)
    b0[:] = raw[:, 1] | np.uint64(1)
    b1[:] = raw[:, 2] & np.uint64((1 << (BAND_WIDTH - 64)) - 1)
    return starts, b0, b1


def _check_duplicates(keys) -> None:
    _, rows = _as_rows(keys)
    seen = set()
    for row in rows:
        b = bytes(row)
        if b in seen:
            raise DuplicateKeysError("duplicate keys in programmed list")
        seen.add(b)


def encode(keys, values: BinVec, rng: CounterRng, max_tries: int = MAX_TRIES) -> OkvsTable:
    n_kv, _ = _as_rows(keys)
    if n_kv != len(values):
        raise OkvsError("key and value counts differ")
    m_cells = table_length(n_kv)
    width = values.width
    nw = values.words.shape[1]
    for attempt in range(max_tries):
        seed = rng.bytes(SEED_BYTES)
        cells = rng.vec(m_cells, width)
        if n_kv == 0:
            return OkvsTable(seed, cells, 0)
        starts, b0, b1 = _positions(keys, seed, m_cells)
        order = np.argsort(starts, kind="stable")
        piv_of_col = np.full(m_cells, -1, dtype=np.int64)
        rs_start = np.empty(n_kv, dtype=np.int64)
        rs_b0 = np.empty(n_kv, dtype=np.uint64)
        rs_b1 = np.empty(n_kv, dtype=np.uint64)
        rs_val = np.empty((n_kv, nw), dtype=np.uint64)
        ok = band_eliminate(
            order, starts, b0, b1, values.words, m_cells, piv_of_col, rs_start, rs_b0, rs_b1, rs_val
        )
        if not ok:
            if attempt == 0:
                _check_duplicates(keys)
            continue
        band_solve(piv_of_col, rs_b0, rs_b1, rs_val, cells.words)
        return OkvsTable(seed, cells, n_kv)
    raise EncodeFailure(f"band system unsolvable after {max_tries} seeds")


def decode(table: OkvsTable, keys) -> BinVec:
    n, _ = _as_rows(keys)
    out = BinVec.zeros(n, table.width)
    if n == 0:
        return out
    starts, b0, b1 = _positions(keys, table.seed, table.m_cells)
    band_decode(starts, b0, b1, table.cells.words, out.words)
    return out


def decode_one(table: OkvsTable, key: bytes):
    return decode(table, [key])[0]
