"""Numba kernels for the two bulk code paths: band-matrix solving and PRF evaluation.

Everything here is called with millions of rows per protocol run; the pure
Python layers above prepare packed uint64/uint8 arrays and hand them off.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

U64_1 = np.uint64(1)

# parity of each 16-bit value, for 64-bit parity in four lookups
_PAR16 = np.zeros(65536, dtype=np.uint8)
for _i in range(1, 65536):
    _PAR16[_i] = _PAR16[_i >> 1] ^ (_i & 1)


@njit(cache=True, inline="always")
def _parity64(x, par16):
    return (
        par16[x & np.uint64(0xFFFF)]
        ^ par16[(x >> np.uint64(16)) & np.uint64(0xFFFF)]
        ^ par16[(x >> np.uint64(32)) & np.uint64(0xFFFF)]
        ^ par16[(x >> np.uint64(48)) & np.uint64(0xFFFF)]
    )


@njit(cache=True, inline="always")
def _ctz64(x):
    n = 0
    while x & U64_1 == np.uint64(0):
        x >>= U64_1
        n += 1
    return n


@njit(cache=True)
def band_eliminate(order, starts, b0, b1, vals, m_cells, piv_of_col, rs_start, rs_b0, rs_b1, rs_val):
    """Row-reduce a random band system; bands are 128-bit windows rebased at their pivot.

    Returns True on success.  A row cancelling to zero means a rank defect, in
    which case the caller retries with a fresh hash seed.
    """
    n = order.shape[0]
    nw = vals.shape[1]
    for t in range(n):
        idx = order[t]
        s = np.int64(starts[idx])
        c0 = b0[idx]
        c1 = b1[idx]
        v = np.empty(nw, dtype=np.uint64)
        for w in range(nw):
            v[w] = vals[idx, w]
        while True:
            if c0 == np.uint64(0) and c1 == np.uint64(0):
                return False
            if c0 != np.uint64(0):
                tz = _ctz64(c0)
            else:
                tz = 64 + _ctz64(c1)
            if tz > 0:
                if tz < 64:
                    sh = np.uint64(tz)
                    c0 = (c0 >> sh) | (c1 << np.uint64(64 - tz))
                    c1 = c1 >> sh
                else:
                    c0 = c1 >> np.uint64(tz - 64)
                    c1 = np.uint64(0)
                s += tz
            if s >= m_cells:
                return False
            r = piv_of_col[s]
            if r < 0:
                piv_of_col[s] = idx
                rs_start[idx] = s
                rs_b0[idx] = c0
                rs_b1[idx] = c1
                for w in range(nw):
                    rs_val[idx, w] = v[w]
                break
            c0 ^= rs_b0[r]
            c1 ^= rs_b1[r]
            for w in range(nw):
                v[w] ^= rs_val[r, w]
    return True


@njit(cache=True)
def band_solve(piv_of_col, rs_b0, rs_b1, rs_val, cells):
    """Back-substitute pivot rows into cells (free cells stay as pre-filled randomness)."""
    m_cells = piv_of_col.shape[0]
    nw = cells.shape[1]
    for s in range(m_cells - 1, -1, -1):
        r = piv_of_col[s]
        if r < 0:
            continue
        c0 = rs_b0[r]
        c1 = rs_b1[r]
        for w in range(nw):
            cells[s, w] = rs_val[r, w]
        for j in range(1, 64):
            if (c0 >> np.uint64(j)) & U64_1:
                for w in range(nw):
                    cells[s, w] ^= cells[s + j, w]
        for j in range(64):
            if (c1 >> np.uint64(j)) & U64_1:
                for w in range(nw):
                    cells[s, w] ^= cells[s + 64 + j, w]


@njit(cache=True, parallel=True)
def band_decode(starts, b0, b1, cells, out):
    n = starts.shape[0]
    nw = cells.shape[1]
    for i in prange(n):
        s = starts[i]
        c0 = b0[i]
        c1 = b1[i]
        for j in range(64):
            if (c0 >> np.uint64(j)) & U64_1:
                for w in range(nw):
                    out[i, w] ^= cells[s + j, w]
        for j in range(64):
            if (c1 >> np.uint64(j)) & U64_1:
                for w in range(nw):
                    out[i, w] ^= cells[s + 64 + j, w]


@njit(cache=True, parallel=True)
def amprf_eval(xw, k8, g0, g1, gc, atab, bw, t_out, par16, out):
    """Batch alternating-moduli PRF: mod-2 expand, key product, mod-3 compress, mod-2 output.

    xw:   (N, 2)   packed 128-bit inputs
    k8:   (8,)     packed 512-bit key
    g0/g1/gc:      expanding matrix rows packed against the two input words + constant column
    atab: (64, 256, 256) uint16 precomputed sums of mod-3 matrix columns per input byte
    bw:   (256, 4) compressing matrix rows packed against the 256-bit mod-3 residue vector
    """
    n = xw.shape[0]
    ow = out.shape[1]
    for i in prange(n):
        x0 = xw[i, 0]
        x1 = xw[i, 1]
        u = np.zeros(8, dtype=np.uint64)
        for r in range(512):
            t = (g0[r] & x0) ^ (g1[r] & x1)
            bit = _parity64(t, par16) ^ gc[r]
            if bit:
                u[r >> 6] |= U64_1 << np.uint64(r & 63)
        for w in range(8):
            u[w] &= k8[w]
        acc = np.zeros(256, dtype=np.uint16)
        for g in range(64):
            byte = (u[g >> 3] >> np.uint64((g & 7) << 3)) & np.uint64(0xFF)
            if byte != np.uint64(0):
                row = atab[g, byte]
                for c in range(256):
                    acc[c] += row[c]
        wv = np.zeros(4, dtype=np.uint64)
        for c in range(256):
            if (acc[c] % 3) & 1:
                wv[c >> 6] |= U64_1 << np.uint64(c & 63)
        for t in range(t_out):
            z = (bw[t, 0] & wv[0]) ^ (bw[t, 1] & wv[1]) ^ (bw[t, 2] & wv[2]) ^ (bw[t, 3] & wv[3])
            if _parity64(z, par16):
                out[i, t >> 6] |= U64_1 << np.uint64(t & 63)


def parity_table() -> np.ndarray:
    return _PAR16
