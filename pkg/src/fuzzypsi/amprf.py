"""Plain evaluation of the alternating-moduli PRF.

The function is a composition of linear maps over alternating moduli:
expand the (hashed) input by a mod-2 matrix, multiply componentwise by the
key, reinterpret the bits as mod-3 residues and compress them by a mod-3
matrix, map residues back to bits by parity, and compress again mod 2.
The moduli switch is what makes the function non-linear over either field.

Dimensions follow the kappa = 128 parameterization: the key has 4*kappa bits,
the mod-3 stage has 2*kappa residues, and the output stage supports any width
up to 2*kappa bits so that wider secret-share contexts (80-bit identifiers,
128- and 192-bit programmed values) evaluate under output-matrix blocks drawn
from the same seed.

All three matrices expand deterministically from a public 128-bit seed that
both parties and the dealer share at session setup.  Only plain evaluation
lives here; the oblivious evaluations are provided by the dealer backend.
"""

from __future__ import annotations

from dataclasses import dataclass
from hashlib import sha256

import numpy as np

from fuzzypsi._kernels import amprf_eval, parity_table
from fuzzypsi.core import KAPPA, BinElem, BinVec, CounterRng

KEY_BYTES = 4 * KAPPA // 8  # 64
INPUT_BYTES = KAPPA // 8  # 16
T_MAX = 2 * KAPPA  # widest supported output

_PAR16 = parity_table()


@dataclass(frozen=True)
class AmPrfMatrices:
    seed: bytes
    g0: np.ndarray  # (4k,) uint64, input bits 0..63
    g1: np.ndarray  # (4k,) uint64, input bits 64..127
    gc: np.ndarray  # (4k,) uint8, constant column
    a: np.ndarray  # (2k, 4k) uint8 entries in {0,1,2}
    atab: np.ndarray  # (4k/8, 256, 2k) uint16, per-byte column sums of a
    b: np.ndarray  # (2k, 2k) uint8 bits
    bw: np.ndarray  # (2k, 4) uint64, rows of b packed


@dataclass(frozen=True)
class AmPrfKey:
    bits: bytes  # 4*kappa bits, XOR-combinable shares

    def __post_init__(self):
        if len(self.bits) != KEY_BYTES:
            raise ValueError("key must be 4*kappa bits")

    def __xor__(self, other: "AmPrfKey") -> "AmPrfKey":
        return AmPrfKey(bytes(a ^ b for a, b in zip(self.bits, other.bits)))

    def words(self) -> np.ndarray:
        return np.frombuffer(self.bits, dtype="<u8")


def sample_key(rng: CounterRng) -> AmPrfKey:
    return AmPrfKey(rng.bytes(KEY_BYTES))


def _pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a (rows, cols) 0/1 array into (rows, cols/64) uint64, bit j of word w = col 64w+j."""
    rows, cols = bits.shape
    out = np.zeros((rows, (cols + 63) // 64), dtype=np.uint64)
    for j in range(cols):
        out[:, j // 64] |= bits[:, j].astype(np.uint64) << np.uint64(j % 64)
    return out


def expand_matrices(seed: bytes, kappa: int = KAPPA) -> AmPrfMatrices:
    if kappa != KAPPA:
        raise ValueError("matrix dimensions are fixed at kappa = 128")
    rng = CounterRng(seed, b"amprf-matrices")
    n4 = 4 * kappa
    m2 = 2 * kappa
    gbits = rng.child("G").integers(0, 2, size=(n4, kappa + 1)).astype(np.uint8)
    gpack = _pack_rows(gbits[:, :kappa])
    a = rng.child("A").integers(0, 3, size=(m2, n4)).astype(np.uint8)
    b = rng.child("B").integers(0, 2, size=(m2, m2)).astype(np.uint8)

    byte_bits = ((np.arange(256)[:, None] >> np.arange(8)[None, :]) & 1).astype(np.uint16)
    atab = np.empty((n4 // 8, 256, m2), dtype=np.uint16)
    for g in range(n4 // 8):
        cols = a[:, 8 * g : 8 * g + 8].astype(np.uint16)  # (m2, 8)
        atab[g] = byte_bits @ cols.T

    return AmPrfMatrices(
        seed=bytes(seed),
        g0=np.ascontiguousarray(gpack[:, 0]),
        g1=np.ascontiguousarray(gpack[:, 1]),
        gc=np.ascontiguousarray(gbits[:, kappa]),
        a=a,
        atab=atab,
        b=b,
        bw=_pack_rows(b),
    )


def hash_to_input(data: bytes) -> bytes:
    """Map an arbitrary byte string into the kappa-bit PRF domain."""
    return sha256(data).digest()[:INPUT_BYTES]


def pack_inputs(hashed: list[bytes] | bytes) -> np.ndarray:
    """Pack 16-byte hashed inputs into the (n, 2) uint64 kernel layout."""
    if isinstance(hashed, (bytes, bytearray)):
        raw = bytes(hashed)
    else:
        raw = b"".join(hashed)
    return np.frombuffer(raw, dtype="<u8").reshape(-1, 2).copy()


def hash_inputs_batch(keys) -> np.ndarray:
    """sha256-and-truncate a batch of byte-string inputs; accepts packed uint8 rows."""
    if isinstance(keys, np.ndarray):
        n, row_len = keys.shape
        mv = memoryview(np.ascontiguousarray(keys)).cast("B")
        buf = bytearray()
        for i in range(n):
            buf += sha256(mv[i * row_len : (i + 1) * row_len]).digest()[:INPUT_BYTES]
    else:
        buf = bytearray()
        for k in keys:
            buf += sha256(k).digest()[:INPUT_BYTES]
    return pack_inputs(bytes(buf))


def eval_batch(mats: AmPrfMatrices, key: AmPrfKey, inputs: np.ndarray, t_out: int) -> BinVec:
    """Evaluate the PRF on pre-hashed (n, 2)-packed inputs, t_out output bits each."""
    if not 1 <= t_out <= T_MAX:
        raise ValueError("output width out of range")
    out = np.zeros((inputs.shape[0], (t_out + 63) // 64), dtype=np.uint64)
    amprf_eval(
        np.ascontiguousarray(inputs, dtype=np.uint64),
        key.words(),
        mats.g0,
        mats.g1,
        mats.gc,
        mats.atab,
        mats.bw,
        t_out,
        _PAR16,
        out,
    )
    return BinVec(out, t_out)


def evaluate(mats: AmPrfMatrices, key: AmPrfKey, x: bytes, t_out: int) -> BinElem:
    """Hash-then-evaluate convenience wrapper for a single input."""
    return eval_batch(mats, key, pack_inputs(hash_to_input(x)), t_out)[0]
