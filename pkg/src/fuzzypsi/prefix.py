"""Binary-string prefix algebra and interval decomposition.

A prefix of length L stands for the set of u-bit integers whose L high-order
bits equal it, i.e. an aligned block of size 2^(u-L).  ``decompose`` covers an
arbitrary integer interval with pairwise-disjoint maximal blocks, which is how
the protocols shrink a programmed interval of size O(delta) down to O(log
delta) programmed keys.

Length is carried explicitly: two prefixes with equal integer value but
different lengths are different keys and serialize differently.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class PrefixStr:
    """The high-order ``length`` bits of a u-bit coordinate."""

    bits: int
    length: int
    u: int

    def __post_init__(self):
        if not 1 <= self.length <= self.u:
            raise ValueError("prefix length out of range")
        if not 0 <= self.bits < (1 << self.length):
            raise ValueError("prefix value out of range")

    @property
    def block_size(self) -> int:
        return 1 << (self.u - self.length)

    def __str__(self):
        return format(self.bits, f"0{self.length}b")


def all_prefix(x: int, k: int, u: int) -> list[PrefixStr]:
    """Prefixes of x dropping j low bits, for j = 0..k (k+1 prefixes)."""
    if not 0 <= k < u:
        raise ValueError("prefix count must satisfy 0 <= k < u")
    if not 0 <= x < (1 << u):
        raise ValueError("value out of the u-bit domain")
    return [PrefixStr(x >> j, u - j, u) for j in range(k + 1)]


def low_bound(p: PrefixStr) -> int:
    return p.bits << (p.u - p.length)


def up_bound(p: PrefixStr) -> int:
    return (p.bits << (p.u - p.length)) | ((1 << (p.u - p.length)) - 1)


def interval(p: PrefixStr) -> tuple[int, int]:
    return low_bound(p), up_bound(p)


def decompose(lo: int, hi: int, u: int) -> list[PrefixStr]:
    """Cover [lo, hi] exactly with pairwise-disjoint maximal prefixes.

    Greedy sweep: at each position take the largest aligned block that starts
    there and still fits inside the interval.  The result is the unique
    minimum-cardinality disjoint cover.
    """
    if lo > hi:
        raise ValueError("empty interval")
    if lo < 0 or hi >= (1 << u):
        raise ValueError("interval exceeds the u-bit domain")
    out = []
    cur = lo
    while cur <= hi:
        align = cur & -cur if cur else 1 << u
        fit = 1 << ((hi - cur + 1).bit_length() - 1)
        block = min(align, fit)
        k = block.bit_length() - 1
        out.append(PrefixStr(cur >> k, u - k, u))
        cur += block
    return out


def serialize(p: PrefixStr) -> bytes:
    """One length byte, then ceil(length/8) bytes, high bits first."""
    nb = (p.length + 7) // 8
    padded = p.bits << (8 * nb - p.length)
    return bytes([p.length]) + padded.to_bytes(nb, "big")


def deserialize(data: bytes, u: int) -> PrefixStr:
    length = data[0]
    nb = (length + 7) // 8
    padded = int.from_bytes(data[1 : 1 + nb], "big")
    return PrefixStr(padded >> (8 * nb - length), length, u)
