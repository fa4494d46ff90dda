"""Trusted-dealer backend for the base MPC functionalities.

The dealer is a third endpoint that evaluates each base functionality in the
clear: oblivious PRF with shared outputs (so-OPRF), oblivious PRF with shared
key and inputs (si-OPRF), oblivious transfer, plain and secret-shared private
equality tests, a shared multiplexer over both the binary and the mod-2^64
domain, binary-to-arithmetic conversion, a private interval test, and a
public-by-shared multiplication.  Real cryptographic realizations (silent OT,
VOLE, and friends) are interface-compatible replacements left out of scope.

Both parties submit one framed request per invocation, carrying the
functionality tag, a monotone call index, and a batch header; the dealer
matches the two requests, checks the headers agree, computes outputs from the
requests and its own seeded randomness alone, and answers each party.  Output
randomness is keyed by (tag, index), so replays are byte-identical regardless
of arrival order.

The module provides three dealer endpoints behind one ``invoke`` interface:
an in-process rendezvous used when both parties run as threads, a framed TCP
client, and the serving loop for a standalone dealer process.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from fuzzypsi import amprf
from fuzzypsi.core import MASK64, BinVec, CounterRng, _nbytes
from fuzzypsi.transport import (
    TAG_B2A,
    TAG_DEALER_HELLO,
    TAG_INTERVAL,
    TAG_MULT,
    TAG_MUX,
    TAG_OT,
    TAG_PEQT,
    TAG_SI_OPRF,
    TAG_SO_OPRF,
    TAG_SSPEQT,
    Channel,
    ProtocolAbort,
)

SENDER = 0
RECEIVER = 1

DOMAIN_BIN = 0
DOMAIN_ARITH = 1

_OK = b"\x01"
_FAIL = b"\x00"


class DealerAbort(RuntimeError):
    pass


@dataclass
class DealerCall:
    """One paired invocation, with plaintext inputs kept for replay and audit."""

    tag: bytes
    index: int
    note: dict = field(default_factory=dict)


def _u8(x: int) -> bytes:
    return struct.pack("<B", x)


def _u16(x: int) -> bytes:
    return struct.pack("<H", x)


def _u32(x: int) -> bytes:
    return struct.pack("<I", x)


def _u64(x: int) -> bytes:
    return struct.pack("<Q", x)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.data):
            raise DealerAbort("truncated dealer payload")
        out = self.data[self.at : self.at + n]
        self.at += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u64_array(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<u8").copy()

    def vec(self, n: int, width: int) -> BinVec:
        return BinVec.from_bytes(self.take(n * _nbytes(width)), n, width)

    def bits(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(n), dtype=np.uint8).copy()

    def done(self) -> None:
        if self.at != len(self.data):
            raise DealerAbort("trailing bytes in dealer payload")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DealerAbort(msg)


class TrustedDealer:
    """In-process dealer: rendezvous both parties' requests, compute, answer."""

    def __init__(self, seed: bytes | int, mats: amprf.AmPrfMatrices | None = None, keep_log: bool = True):
        self.rng = CounterRng(seed, b"dealer")
        self.mats = mats
        self.keep_log = keep_log
        self.log: list[DealerCall] = []
        self._lock = threading.Condition()
        self._pending: dict[tuple[bytes, int], dict] = {}
        self._poison: str | None = None
        self.bytes_in = 0
        self.bytes_out = 0
        self._handlers = {
            TAG_DEALER_HELLO: self._h_hello,
            TAG_SO_OPRF: self._h_so_oprf,
            TAG_SI_OPRF: self._h_si_oprf,
            TAG_OT: self._h_ot,
            TAG_PEQT: self._h_peqt,
            TAG_SSPEQT: self._h_sspeqt,
            TAG_MUX: self._h_mux,
            TAG_B2A: self._h_b2a,
            TAG_INTERVAL: self._h_interval,
            TAG_MULT: self._h_mult,
        }

    def poison(self, msg: str) -> None:
        """Wake every waiter with an abort; called when a party dies mid-protocol."""
        with self._lock:
            self._poison = msg
            self._lock.notify_all()

    def invoke(self, role: int, tag: bytes, index: int, payload: bytes) -> bytes:
        self.bytes_in += len(payload)
        key = (tag, index)
        with self._lock:
            slot = self._pending.setdefault(key, {"req": {}, "resp": None})
            _require(role not in slot["req"], f"duplicate role in {tag!r}#{index}")
            slot["req"][role] = payload
            if len(slot["req"]) == 2:
                slot["resp"] = self._compute(tag, index, slot["req"])
                self._lock.notify_all()
            else:
                while slot["resp"] is None and self._poison is None:
                    self._lock.wait()
            if slot["resp"] is None:
                raise ProtocolAbort(f"dealer poisoned: {self._poison}", dealer=True)
            resp = slot["resp"][role]
            slot.setdefault("taken", set()).add(role)
            if len(slot["taken"]) == 2:
                del self._pending[key]
        self.bytes_out += len(resp)
        if resp[:1] == _FAIL:
            raise ProtocolAbort(resp[1:].decode("utf-8", "replace"), dealer=True)
        return resp[1:]

    def _compute(self, tag: bytes, index: int, req: dict) -> dict:
        handler = self._handlers.get(tag)
        try:
            _require(handler is not None, f"unknown functionality {tag!r}")
            rng = self.rng.child(f"{tag.decode()}:{index}")
            note: dict = {}
            rs, rr = handler(req[SENDER], req[RECEIVER], rng, note)
            if self.keep_log:
                self.log.append(DealerCall(tag, index, note))
            return {SENDER: _OK + rs, RECEIVER: _OK + rr}
        except DealerAbort as e:
            msg = f"{tag.decode().strip('-')}#{index}: {e}".encode()
            return {SENDER: _FAIL + msg, RECEIVER: _FAIL + msg}

    # -- handlers ----------------------------------------------------------

    def _h_hello(self, sp: bytes, rp: bytes, rng, note) -> tuple[bytes, bytes]:
        s, r = _Reader(sp), _Reader(rp)
        _require(s.u8() == SENDER and r.u8() == RECEIVER, "role mixup in hello")
        seed_s = s.take(16)
        seed_r = r.take(16)
        _require(seed_s == seed_r, "matrix seed mismatch")
        if self.mats is None or self.mats.seed != seed_s:
            self.mats = amprf.expand_matrices(seed_s)
        note["params_s"] = s.data[s.at :]
        note["params_r"] = r.data[r.at :]
        _require(note["params_s"] == note["params_r"], "params mismatch between parties")
        return b"", b""

    def _mats(self) -> amprf.AmPrfMatrices:
        _require(self.mats is not None, "dealer has no PRF matrices; hello not run")
        return self.mats

    def _h_so_oprf(self, sp: bytes, rp: bytes, rng, note) -> tuple[bytes, bytes]:
        """Keyholder and querier are functional roles; either session role can hold the key."""
        s, r = _Reader(sp), _Reader(rp)
        flag_s, flag_r = s.u8(), r.u8()
        _require({flag_s, flag_r} == {0, 1}, "need exactly one keyholder and one querier")
        kside, qside = (s, r) if flag_s == 0 else (r, s)
        t_k, t_q = kside.u16(), qside.u16()
        _require(t_k == t_q, "output width mismatch")
        key = amprf.AmPrfKey(kside.take(64))
        kside.done()
        count = qside.u32()
        key_len = qside.u16()
        packed = np.frombuffer(qside.take(count * key_len), dtype=np.uint8).reshape(count, key_len)
        qside.done()
        if count:
            y = amprf.eval_batch(self._mats(), key, amprf.hash_inputs_batch(packed), t_k)
        else:
            y = BinVec.zeros(0, t_k)
        yk = rng.vec(count, t_k)
        yq = yk ^ y
        note.update(key=key.bits, queries=packed, outputs=y)
        body = _u32(count)
        resp_k = body + yk.to_bytes()
        resp_q = body + yq.to_bytes()
        return (resp_k, resp_q) if flag_s == 0 else (resp_q, resp_k)

    def _h_si_oprf(self, sp: bytes, rp: bytes, rng, note) -> tuple[bytes, bytes]:
        s, r = _Reader(sp), _Reader(rp)
        _require(s.u8() == SENDER and r.u8() == RECEIVER, "role mixup")
        hdr_s = (s.u8(), s.u16(), s.u16(), s.u32())
        hdr_r = (r.u8(), r.u16(), r.u16(), r.u32())
        _require(hdr_s == hdr_r, "batch header mismatch")
        learner, t_out, width, count = hdr_s
        key = amprf.AmPrfKey(s.take(64)) ^ amprf.AmPrfKey(r.take(64))
        xs = s.vec(count, width)
        xr = r.vec(count, width)
        s.done(), r.done()
        x = xs ^ xr
        nb = _nbytes(width)
        raw = x.to_bytes()
        hashed = amprf.hash_inputs_batch([raw[i * nb : (i + 1) * nb] for i in range(count)])
        ids = (
            amprf.eval_batch(self._mats(), key, hashed, t_out)
            if count
            else BinVec.zeros(0, t_out)
        )
        note.update(key=key.bits, inputs=x, ids=ids, learner=learner)
        body = ids.to_bytes()
        return (body, b"") if learner == SENDER else (b"", body)

    def _h_ot(self, sp: bytes, rp: bytes, rng, note) -> tuple[bytes, bytes]:
        s, r = _Reader(sp), _Reader(rp)
        _require(s.u8() == SENDER and r.u8() == RECEIVER, "role mixup")
        count, msg_len = s.u32(), s.u16()
        z0 = np.frombuffer(s.take(count * msg_len), dtype=np.uint8).reshape(count, msg_len)
        z1 = np.frombuffer(s.take(count * msg_len), dtype=np.uint8).reshape(count, msg_len)
        s.done()
        count_r = r.u32()
        _require(count_r == count, "batch length mismatch")
        bits = r.bits(count)
        r.done()
        sel = np.where(bits[:, None].astype(bool), z1, z0)
        note.update(bits=bits, count=count)
        return b"", sel.tobytes()

    def _bin_pair(self, sp: bytes, rp: bytes) -> tuple[int, BinVec, BinVec]:
        s, r = _Reader(sp), _Reader(rp)
        _require(s.u8() == SENDER and r.u8() == RECEIVER, "role mixup")
        c_s, w_s = s.u32(), s.u16()
        c_r, w_r = r.u32(), r.u16()
        _require((c_s, w_s) == (c_r, w_r), "batch header mismatch")
        a = s.vec(c_s, w_s)
        b = r.vec(c_s, w_s)
        s.done(), r.done()
        return c_s, a, b

    def _h_peqt(self, sp: bytes, rp: bytes, rng, note) -> tuple[bytes, bytes]:
        count, a, b = self._bin_pair(sp, rp)
        bits = (a ^ b).is_zero().astype(np.uint8)
        note.update(bits=bits)
        return b"", bits.tobytes()

    def _h_sspeqt(self, sp: bytes, rp: bytes, rng, note) -> tuple[bytes, bytes]:
        count, a, b = self._bin_pair(sp, rp)
        eq = (a ^ b).is_zero().astype(np.uint8)
        r0 = (rng.words(count) & np.uint64(1)).astype(np.uint8)
        r1 = eq ^ r0
        note.update(eq=eq)
        return r1.tobytes(), r0.tobytes()

    def _h_mux(self, sp: bytes, rp: bytes, rng, note) -> tuple[bytes, bytes]:
        s, r = _Reader(sp), _Reader(rp)
        _require(s.u8() == SENDER and r.u8() == RECEIVER, "role mixup")
        hdr_s = (s.u8(), s.u32(), s.u16())
        hdr_r = (r.u8(), r.u32(), r.u16())
        _require(hdr_s == hdr_r, "batch header mismatch")
        domain, count, width = hdr_s
        b0 = s.bits(count)
        b1 = r.bits(count)
        active = ((b0 ^ b1) & 1).astype(bool)
        if domain == DOMAIN_BIN:
            x0 = s.vec(count, width)
            x1 = r.vec(count, width)
            s.done(), r.done()
            r0 = rng.vec(count, width)
            gated = (x0 ^ x1).words
            gated = np.where(active[:, None], gated, np.uint64(0))
            r1 = BinVec(gated, width) ^ r0
            return r1.to_bytes(), r0.to_bytes()
        x0 = s.u64_array(count)
        x1 = r.u64_array(count)
        s.done(), r.done()
        r0 = rng.words(count)
        r1 = np.where(active, (x0 + x1 - r0) & MASK64, (-r0) & MASK64)
        return r1.astype("<u8").tobytes(), r0.astype("<u8").tobytes()

    def _h_b2a(self, sp: bytes, rp: bytes, rng, note) -> tuple[bytes, bytes]:
        count, a, b = self._bin_pair(sp, rp)
        _require(a.width <= 128, "width overflow for arithmetic conversion")
        v = (a ^ b).words[:, 0] if count else np.zeros(0, dtype=np.uint64)
        ds = rng.words(count)
        dr = (v - ds) & MASK64
        note.update(values=v)
        return ds.astype("<u8").tobytes(), dr.astype("<u8").tobytes()

    def _h_interval(self, sp: bytes, rp: bytes, rng, note) -> tuple[bytes, bytes]:
        s, r = _Reader(sp), _Reader(rp)
        _require(s.u8() == SENDER and r.u8() == RECEIVER, "role mixup")
        c_s, bound_s = s.u32(), s.u64()
        c_r, bound_r = r.u32(), r.u64()
        _require((c_s, bound_s) == (c_r, bound_r), "batch header mismatch")
        ds = s.u64_array(c_s)
        dr = r.u64_array(c_s)
        s.done(), r.done()
        total = (ds + dr) & MASK64
        bits = (total <= np.uint64(bound_s)).astype(np.uint8)
        note.update(totals=total, bits=bits)
        return b"", bits.tobytes()

    def _h_mult(self, sp: bytes, rp: bytes, rng, note) -> tuple[bytes, bytes]:
        s, r = _Reader(sp), _Reader(rp)
        _require(s.u8() == SENDER and r.u8() == RECEIVER, "role mixup")
        c_s, c_r = s.u32(), r.u32()
        _require(c_s == c_r, "batch length mismatch")
        e = s.u64_array(c_s)
        sh = r.u64_array(c_s)
        s.done(), r.done()
        prod = (e * sh) & MASK64
        ms = rng.words(c_s)
        mr = (prod - ms) & MASK64
        return ms.astype("<u8").tobytes(), mr.astype("<u8").tobytes()


class RemoteDealer:
    """Party-side dealer endpoint speaking frames over a dedicated channel."""

    def __init__(self, channel: Channel):
        self.channel = channel

    def invoke(self, role: int, tag: bytes, index: int, payload: bytes) -> bytes:
        self.channel.send(tag, index, payload)
        _, resp = self.channel.recv(tag)
        if resp[:1] == _FAIL:
            raise ProtocolAbort(resp[1:].decode("utf-8", "replace"), dealer=True)
        return resp[1:]


def serve_dealer(channels: dict[int, Channel], dealer: TrustedDealer, calls: int | None = None) -> None:
    """Drive a dealer over two party channels until they close.

    One reader thread per party; each forwards requests into the rendezvous and
    writes the matched response back on its own channel.
    """
    errors: list[BaseException] = []

    def pump(role: int, ch: Channel):
        try:
            while True:
                tag, index, payload = ch.recv_any()
                try:
                    resp = _OK + dealer.invoke(role, tag, index, payload)
                except ProtocolAbort as e:
                    resp = _FAIL + e.phase.encode()
                ch.send(tag, index, resp)
        except (ConnectionError, OSError):
            pass
        except BaseException as e:  # pragma: no cover
            errors.append(e)
        finally:
            # unblock a peer stuck waiting for this side's next request
            dealer.poison("peer channel closed")

    threads = [threading.Thread(target=pump, args=(role, ch), daemon=True) for role, ch in channels.items()]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]


# -- party-side request builders -------------------------------------------


def dealer_hello(session, matrix_seed: bytes) -> None:
    payload = _u8(session.role) + matrix_seed + session.params.to_text().encode()
    session.dealer_call(TAG_DEALER_HELLO, payload)


def so_oprf(session, *, key: amprf.AmPrfKey | None = None, queries: np.ndarray | None = None, t_out: int) -> BinVec:
    """Shared-output OPRF: one side holds the key, the other the query batch.

    Both parties get one XOR share per query, reconstructing to PRF(key, x_i).
    Which session role holds the key varies by protocol direction, so the
    payload carries the functional role explicitly (0 keyholder, 1 querier).
    """
    if key is not None:
        assert queries is None
        payload = _u8(0) + _u16(t_out) + key.bits
    else:
        assert queries is not None
        count, key_len = queries.shape
        payload = _u8(1) + _u16(t_out) + _u32(count) + _u16(key_len) + queries.tobytes()
    resp = _Reader(session.dealer_call(TAG_SO_OPRF, payload))
    count = resp.u32()
    out = resp.vec(count, t_out)
    resp.done()
    return out


def si_oprf(session, key_share: amprf.AmPrfKey, values: BinVec, learner: int, t_out: int) -> BinVec | None:
    payload = (
        _u8(session.role)
        + _u8(learner)
        + _u16(t_out)
        + _u16(values.width)
        + _u32(len(values))
        + key_share.bits
        + values.to_bytes()
    )
    resp = session.dealer_call(TAG_SI_OPRF, payload)
    if session.role != learner:
        return None
    return BinVec.from_bytes(resp, len(values), t_out)


def ot_send(session, z0: np.ndarray, z1: np.ndarray) -> None:
    count, msg_len = z0.shape
    payload = _u8(SENDER) + _u32(count) + _u16(msg_len) + z0.tobytes() + z1.tobytes()
    session.dealer_call(TAG_OT, payload)


def ot_choose(session, bits: np.ndarray, msg_len: int) -> np.ndarray:
    payload = _u8(RECEIVER) + _u32(len(bits)) + bits.astype(np.uint8).tobytes()
    resp = session.dealer_call(TAG_OT, payload)
    return np.frombuffer(resp, dtype=np.uint8).reshape(len(bits), msg_len)


def _bin_payload(session, values: BinVec) -> bytes:
    return _u8(session.role) + _u32(len(values)) + _u16(values.width) + values.to_bytes()


def peqt(session, values: BinVec) -> np.ndarray | None:
    resp = session.dealer_call(TAG_PEQT, _bin_payload(session, values))
    if session.role == SENDER:
        return None
    return np.frombuffer(resp, dtype=np.uint8).copy()


def sspeqt(session, values: BinVec) -> np.ndarray:
    resp = session.dealer_call(TAG_SSPEQT, _bin_payload(session, values))
    return np.frombuffer(resp, dtype=np.uint8).copy()


def mux_bin(session, bits: np.ndarray, values: BinVec) -> BinVec:
    payload = (
        _u8(session.role)
        + _u8(DOMAIN_BIN)
        + _u32(len(values))
        + _u16(values.width)
        + bits.astype(np.uint8).tobytes()
        + values.to_bytes()
    )
    resp = session.dealer_call(TAG_MUX, payload)
    return BinVec.from_bytes(resp, len(values), values.width)


def mux_arith(session, bits: np.ndarray, values: np.ndarray) -> np.ndarray:
    payload = (
        _u8(session.role)
        + _u8(DOMAIN_ARITH)
        + _u32(len(values))
        + _u16(64)
        + bits.astype(np.uint8).tobytes()
        + values.astype("<u8").tobytes()
    )
    resp = session.dealer_call(TAG_MUX, payload)
    return np.frombuffer(resp, dtype="<u8").copy()


def b2a(session, values: BinVec) -> np.ndarray:
    resp = session.dealer_call(TAG_B2A, _bin_payload(session, values))
    return np.frombuffer(resp, dtype="<u8").copy()


def interval_test(session, shares: np.ndarray, bound: int) -> np.ndarray | None:
    payload = _u8(session.role) + _u32(len(shares)) + _u64(bound) + shares.astype("<u8").tobytes()
    resp = session.dealer_call(TAG_INTERVAL, payload)
    if session.role == SENDER:
        return None
    return np.frombuffer(resp, dtype=np.uint8).copy()


def mult_pub(session, values: np.ndarray) -> np.ndarray:
    payload = _u8(session.role) + _u32(len(values)) + values.astype("<u8").tobytes()
    resp = session.dealer_call(TAG_MULT, payload)
    return np.frombuffer(resp, dtype="<u8").copy()
