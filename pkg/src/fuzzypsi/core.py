"""Binary-field elements, additive shares, parameters, and seeded randomness.

Values manipulated by the protocols live in F_{2^w} for a handful of widths
(64, 80, 128, ... bits); addition is bitwise XOR and every element is its own
inverse.  Refined filtering for L_p additionally uses additive shares modulo
2^64 after binary-to-arithmetic conversion.

Two representations coexist: :class:`BinElem` is a boxed single element used
on API surfaces and in tests, while :class:`BinVec` packs a batch of elements
into a ``(n, words)`` uint64 array for the bulk protocol paths, which routinely
handle millions of elements.

Concatenation convention: ``concat(a, b)`` places ``a`` in the low-order bits.
A value written ``tag || payload`` therefore has the tag in the low bits, and
all multi-part values used on the wire split on 64-bit word boundaries.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from hashlib import blake2b

import numpy as np

KAPPA = 128
LAMBDA = 40

ID_BITS = 80
TAG_BITS = 64
VALUE_BITS_LINF = 64
VALUE_BITS_LP = 128

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


class ValidationError(ValueError):
    """A parameter or input violates one of the protocol side conditions."""


def _nwords(width: int) -> int:
    return (width + 63) // 64


def _nbytes(width: int) -> int:
    return (width + 7) // 8


def _top_mask(width: int) -> np.uint64:
    rem = width % 64
    if rem == 0:
        return MASK64
    return np.uint64((1 << rem) - 1)


class BinElem:
    """A single element of F_{2^width}, backed by a Python int."""

    __slots__ = ("value", "width")

    def __init__(self, value: int, width: int):
        if width <= 0:
            raise ValueError("width must be positive")
        if not 0 <= value < (1 << width):
            raise ValueError(f"value out of range for {width}-bit element")
        self.value = value
        self.width = width

    def __xor__(self, other: "BinElem") -> "BinElem":
        if self.width != other.width:
            raise ValueError("width mismatch")
        return BinElem(self.value ^ other.value, self.width)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BinElem)
            and self.value == other.value
            and self.width == other.width
        )

    def __hash__(self):
        return hash((self.value, self.width))

    def __repr__(self):
        return f"BinElem(0x{self.value:0{_nbytes(self.width) * 2}x}, width={self.width})"

    def is_zero(self) -> bool:
        return self.value == 0

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(_nbytes(self.width), "little")

    @classmethod
    def from_bytes(cls, data: bytes, width: int) -> "BinElem":
        return cls(int.from_bytes(data, "little"), width)

    @classmethod
    def zero(cls, width: int) -> "BinElem":
        return cls(0, width)

    def split(self, low_bits: int) -> tuple["BinElem", "BinElem"]:
        """Split off the low ``low_bits`` bits; XOR distributes over the parts."""
        if not 0 < low_bits < self.width:
            raise ValueError("split point out of range")
        lo = self.value & ((1 << low_bits) - 1)
        hi = self.value >> low_bits
        return BinElem(lo, low_bits), BinElem(hi, self.width - low_bits)

    def concat(self, high: "BinElem") -> "BinElem":
        return BinElem(self.value | (high.value << self.width), self.width + high.width)


class BinVec:
    """A batch of n elements of F_{2^width}, packed little-endian into uint64 words."""

    __slots__ = ("words", "width")

    def __init__(self, words: np.ndarray, width: int):
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.ndim != 2 or words.shape[1] != _nwords(width):
            raise ValueError("words shape does not match width")
        self.words = words
        self.width = width

    def __len__(self) -> int:
        return self.words.shape[0]

    def __xor__(self, other: "BinVec") -> "BinVec":
        if self.width != other.width:
            raise ValueError("width mismatch")
        return BinVec(self.words ^ other.words, self.width)

    def __getitem__(self, i) -> "BinElem":
        if isinstance(i, (int, np.integer)):
            val = 0
            for w in range(self.words.shape[1] - 1, -1, -1):
                val = (val << 64) | int(self.words[i, w])
            return BinElem(val, self.width)
        return BinVec(self.words[i], self.width)

    @classmethod
    def zeros(cls, n: int, width: int) -> "BinVec":
        return cls(np.zeros((n, _nwords(width)), dtype=np.uint64), width)

    @classmethod
    def from_elems(cls, elems: list[BinElem], width: int) -> "BinVec":
        out = cls.zeros(len(elems), width)
        for i, e in enumerate(elems):
            if e.width != width:
                raise ValueError("width mismatch")
            v = e.value
            for w in range(out.words.shape[1]):
                out.words[i, w] = (v >> (64 * w)) & 0xFFFFFFFFFFFFFFFF
        return out

    @classmethod
    def from_ints(cls, values, width: int) -> "BinVec":
        arr = np.asarray(values, dtype=np.uint64).reshape(-1, 1)
        if width > 64:
            pad = np.zeros((arr.shape[0], _nwords(width) - 1), dtype=np.uint64)
            arr = np.concatenate([arr, pad], axis=1)
        return cls(arr, width)

    def mask_top(self) -> "BinVec":
        self.words[:, -1] &= _top_mask(self.width)
        return self

    def copy(self) -> "BinVec":
        return BinVec(self.words.copy(), self.width)

    def is_zero(self) -> np.ndarray:
        """Boolean array: which elements are the additive identity."""
        return ~np.any(self.words != 0, axis=1)

    def xor_reduce_groups(self, group: int) -> "BinVec":
        """XOR-fold consecutive groups of ``group`` elements into one each."""
        n = len(self)
        if n % group != 0:
            raise ValueError("length not divisible by group size")
        w = self.words.reshape(n // group, group, -1)
        out = np.bitwise_xor.reduce(w, axis=1)
        return BinVec(out, self.width)

    def to_bytes(self) -> bytes:
        nb = _nbytes(self.width)
        as_u8 = self.words.view(np.uint8).reshape(len(self), -1)
        return as_u8[:, :nb].tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, n: int, width: int) -> "BinVec":
        nb = _nbytes(width)
        if len(data) != n * nb:
            raise ValueError("byte length mismatch")
        raw = np.frombuffer(data, dtype=np.uint8).reshape(n, nb)
        full = np.zeros((n, _nwords(width) * 8), dtype=np.uint8)
        full[:, :nb] = raw
        return cls(full.view(np.uint64), width)

    @classmethod
    def concat_words(cls, parts: list["BinVec"]) -> "BinVec":
        """Concatenate per-element; every part except the last must be word-aligned."""
        for p in parts[:-1]:
            if p.width % 64 != 0:
                raise ValueError("interior parts must be multiples of 64 bits")
        words = np.concatenate([p.words for p in parts], axis=1)
        return cls(words, sum(p.width for p in parts))

    def split_words(self, widths: list[int]) -> list["BinVec"]:
        if sum(widths) != self.width:
            raise ValueError("split widths must sum to total width")
        out, at = [], 0
        for w in widths[:-1]:
            if w % 64 != 0:
                raise ValueError("interior parts must be multiples of 64 bits")
        for w in widths:
            nw = _nwords(w)
            out.append(BinVec(self.words[:, at : at + nw].copy(), w).mask_top())
            at += nw
        return out

    def as_u64(self) -> np.ndarray:
        """The elements as plain uint64 values (width must be <= 64)."""
        if self.width > 64:
            raise ValueError("element wider than 64 bits")
        return self.words[:, 0].copy()


@dataclass(frozen=True)
class BinShare:
    """One party's additive (XOR) share of a BinElem."""

    value: BinElem

    @property
    def width(self) -> int:
        return self.value.width


def reconstruct(a: BinShare, b: BinShare) -> BinElem:
    return a.value ^ b.value


@dataclass(frozen=True)
class ArithShare:
    """One party's additive share modulo 2^64."""

    value: int

    def __post_init__(self):
        object.__setattr__(self, "value", self.value & 0xFFFFFFFFFFFFFFFF)


def reconstruct_arith(a: ArithShare, b: ArithShare) -> int:
    return (a.value + b.value) & 0xFFFFFFFFFFFFFFFF


class CounterRng:
    """Seedable counter-mode generator; all protocol randomness flows through here.

    The key is derived by hashing the seed, and feeds a Philox counter-based
    generator.  ``child(label)`` derives an independent stream, so the order in
    which concurrent protocol phases draw randomness cannot perturb replay.
    """

    def __init__(self, seed: bytes | int | str, label: bytes = b""):
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "little", signed=False)
        elif isinstance(seed, str):
            seed = seed.encode()
        self.key = blake2b(seed + b"\x00" + label, digest_size=32).digest()
        philox = np.random.Philox(key=np.frombuffer(self.key[:16], dtype="<u8"))
        self._gen = np.random.Generator(philox)

    def child(self, label: str | bytes) -> "CounterRng":
        if isinstance(label, str):
            label = label.encode()
        return CounterRng(self.key, label)

    def bytes(self, n: int) -> bytes:
        return self._gen.bytes(n)

    def words(self, n: int) -> np.ndarray:
        return self._gen.integers(0, 1 << 64, size=n, dtype=np.uint64)

    def vec(self, n: int, width: int) -> BinVec:
        w = self._gen.integers(0, 1 << 64, size=(n, _nwords(width)), dtype=np.uint64)
        return BinVec(w, width).mask_top()

    def element(self, width: int) -> BinElem:
        return self.vec(1, width)[0]

    def integers(self, low: int, high: int, size=None) -> np.ndarray | int:
        out = self._gen.integers(low, high, size=size, dtype=np.uint64)
        return out if size is not None else int(out)

    def u64(self, n: int) -> np.ndarray:
        return self.words(n)

    def shuffle(self, arr) -> None:
        self._gen.shuffle(arr)


def share_bin(v: BinElem, rng: CounterRng) -> tuple[BinShare, BinShare]:
    """Fresh XOR sharing of v; the first share is drawn uniformly from rng."""
    r = rng.element(v.width)
    return BinShare(r), BinShare(r ^ v)


def share_vec(v: BinVec, rng: CounterRng) -> tuple[BinVec, BinVec]:
    r = rng.vec(len(v), v.width)
    return r, r ^ v


def share_arith_vec(values: np.ndarray, rng: CounterRng) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=np.uint64)
    r = rng.u64(values.shape[0])
    return r, (values - r) & MASK64


@dataclass(frozen=True)
class PointSet:
    """n points with d coordinates of u-bit unsigned integers each."""

    coords: np.ndarray  # (n, d) uint64
    u: int

    def __post_init__(self):
        c = np.ascontiguousarray(self.coords, dtype=np.uint64)
        if c.ndim != 2 or c.shape[1] < 1:
            raise ValidationError("points must form an (n, d) array with d >= 1")
        if self.u < 1 or self.u > 64:
            raise ValidationError("coordinate bit-length must be in [1, 64]")
        if self.u < 64 and np.any(c >= np.uint64(1 << self.u)):
            raise ValidationError("coordinate exceeds the u-bit domain")
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    def point_bytes(self, j: int) -> bytes:
        return self.coords[j].astype("<u8").tobytes()


POINT_COORD_BYTES = 8


def point_from_bytes(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<u8").copy()


@dataclass(frozen=True)
class Params:
    """Session parameters; ``validate`` enforces every side condition."""

    m: int
    n: int
    d: int
    delta: int
    p: float = math.inf  # metric exponent; math.inf selects the max metric
    u: int = 32
    kappa: int = KAPPA
    lam: int = LAMBDA
    id_bits: int = ID_BITS
    tag_bits: int = TAG_BITS
    prefix: bool = False
    value_bits: int = field(default=0)  # 0 selects the per-metric default

    def __post_init__(self):
        if self.value_bits == 0:
            vb = VALUE_BITS_LINF if self.p == math.inf else VALUE_BITS_LP
            object.__setattr__(self, "value_bits", vb)

    @property
    def is_linf(self) -> bool:
        return self.p == math.inf

    @property
    def p_int(self) -> int:
        if self.is_linf:
            raise ValueError("p is infinite")
        return int(self.p)

    @property
    def log_delta(self) -> int:
        if self.delta < 2 or self.delta & (self.delta - 1):
            raise ValidationError("delta is not a power of two")
        return self.delta.bit_length() - 1

    def with_prefix(self, prefix: bool) -> "Params":
        return replace(self, prefix=prefix)

    def to_text(self) -> str:
        p = "inf" if self.is_linf else str(int(self.p))
        parts = [
            f"m={self.m}",
            f"n={self.n}",
            f"d={self.d}",
            f"delta={self.delta}",
            f"p={p}",
            f"u={self.u}",
            f"kappa={self.kappa}",
            f"lambda={self.lam}",
            f"id_bits={self.id_bits}",
            f"tag_bits={self.tag_bits}",
            f"value_bits={self.value_bits}",
            f"prefix={int(self.prefix)}",
        ]
        return " ".join(parts)

    @classmethod
    def from_text(cls, text: str) -> "Params":
        kv = dict(item.split("=", 1) for item in re.split(r"\s+", text.strip()))
        return cls(
            m=int(kv["m"]),
            n=int(kv["n"]),
            d=int(kv["d"]),
            delta=int(kv["delta"]),
            p=math.inf if kv["p"] == "inf" else float(int(kv["p"])),
            u=int(kv["u"]),
            kappa=int(kv["kappa"]),
            lam=int(kv["lambda"]),
            id_bits=int(kv["id_bits"]),
            tag_bits=int(kv["tag_bits"]),
            prefix=bool(int(kv["prefix"])),
            value_bits=int(kv["value_bits"]),
        )


def min_id_bits(params: Params) -> int:
    """Smallest identifier width meeting the n^2-collision bound."""
    return params.lam + 2 * math.ceil(math.log2(max(params.m, params.n)))


def min_value_bits(params: Params) -> int:
    logm = math.ceil(math.log2(max(params.m, 2)))
    if params.is_linf:
        return params.lam + logm
    return params.lam + logm + int(params.p) * math.ceil(math.log2(max(params.delta, 2)))


def validate(params: Params, points: PointSet | None = None) -> None:
    """Raise ValidationError naming the first violated condition, if any."""
    if params.m < 1 or params.n < 1:
        raise ValidationError("set sizes must be positive")
    if params.d < 1:
        raise ValidationError("dimension must be at least 1")
    if params.delta < 1:
        raise ValidationError("delta must be at least 1")
    if not (1 <= params.u <= 64):
        raise ValidationError("coordinate bit-length must be in [1, 64]")
    if not params.is_linf:
        if params.p < 1 or params.p != int(params.p):
            raise ValidationError("metric exponent must be a positive integer or inf")
        if params.prefix and int(params.p) not in (1, 2):
            raise ValidationError("prefix mode supports p in {1, 2} only")
        if params.d * (2 * params.delta) ** int(params.p) >= 1 << 63:
            raise ValidationError("distance sum may wrap the arithmetic modulus")
        logm = math.ceil(math.log2(max(params.m, 2)))
        logd = math.ceil(math.log2(max(params.delta, 2)))
        if params.lam + logm + int(params.p) * logd > 64:
            raise ValidationError(
                "interval test over the 2^64 arithmetic domain cannot keep lambda bits of slack"
            )
    if params.prefix and (params.delta < 2 or params.delta & (params.delta - 1)):
        raise ValidationError("delta not a power of two")
    if 2 * params.delta >= (1 << params.u):
        raise ValidationError("delta too large for the coordinate domain")
    if params.id_bits < min_id_bits(params):
        raise ValidationError(
            f"id width {params.id_bits} below the distinctiveness bound {min_id_bits(params)}"
        )
    if params.id_bits % 8 != 0:
        raise ValidationError("id width must be byte aligned")
    if params.value_bits < min_value_bits(params):
        raise ValidationError(
            f"value-share width {params.value_bits} below the filtering bound "
            f"{min_value_bits(params)}"
        )
    if params.tag_bits != 64:
        raise ValidationError("tag width is fixed at 64 bits")
    if points is not None:
        check_point_bounds(params, points)


def check_point_bounds(params: Params, points: PointSet) -> None:
    if points.u != params.u:
        raise ValidationError("point set bit-length disagrees with parameters")
    lo = np.uint64(params.delta)
    hi = np.uint64((1 << params.u) - params.delta)
    if np.any(points.coords < lo) or np.any(points.coords >= hi):
        raise ValidationError("point within delta of domain boundary")
