"""Oblivious programmable PRF with secret-shared outputs.

The sender programs a list of (key, value) points; the receiver queries a
batch of keys.  Both end up with XOR shares of a function that equals the
programmed value on programmed keys and is pseudorandom elsewhere, without
either party seeing the outputs in the clear.

Construction: the parties run the shared-output OPRF (dealer functionality),
giving them shares of PRF(k, x_i) on the receiver's queries, where k is a
fresh key the sender sampled for this invocation.  The sender then encodes
``value - PRF(k, key)`` for every programmed point into an OKVS and ships the
table; the receiver folds the decode of each query into its OPRF share.  For a
programmed query both corrections cancel and the shares reconstruct to the
programmed value.  The OKVS table is the only party-to-party traffic.

Programmed lists are padded to a public size with domain-separated dummy keys
before this layer is invoked, so the table length never depends on private
structure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from fuzzypsi import amprf, okvs
from fuzzypsi.core import BinElem, BinVec, CounterRng
from fuzzypsi.functionalities import SENDER, so_oprf
from fuzzypsi.session import Session
from fuzzypsi.transport import TAG_OKVS, ProtocolAbort

PAD_MAGIC = b"PAD"


@dataclass
class ProgrammedList:
    """Fixed-layout key rows plus their programmed values; padded to a public size."""

    keys: np.ndarray  # (count, key_len) uint8
    values: BinVec
    real_count: int

    def __post_init__(self):
        if self.keys.shape[0] != len(self.values):
            raise ValueError("key/value count mismatch")

    @property
    def count(self) -> int:
        return self.keys.shape[0]

    @property
    def key_len(self) -> int:
        return self.keys.shape[1]


def pad_list(keys: np.ndarray, values: BinVec, target: int, rng: CounterRng, nonce: bytes = b"") -> ProgrammedList:
    """Pad with dummy rows up to the public target size.

    Dummy keys are "PAD" then a counter then the session nonce, truncated to
    the key layout width; real keys carry a context tag byte distinct from
    'P', so dummies can never collide with them.
    """
    real, key_len = keys.shape
    if real > target:
        raise ValueError(f"programmed list overflows its public size: {real} > {target}")
    if key_len < 8:
        raise ValueError("key layout too narrow for dummy padding")
    n_pad = target - real
    pad_keys = np.zeros((n_pad, key_len), dtype=np.uint8)
    for i in range(n_pad):
        row = (PAD_MAGIC + i.to_bytes(8, "little") + nonce)[:key_len]
        pad_keys[i, : len(row)] = np.frombuffer(row, dtype=np.uint8)
    all_keys = np.concatenate([keys, pad_keys], axis=0)
    all_vals = BinVec(
        np.concatenate([values.words, rng.vec(n_pad, values.width).words], axis=0),
        values.width,
    )
    return ProgrammedList(all_keys, all_vals, real)


@dataclass
class SenderHandle:
    """Sender-side result: its output shares plus oracle access to F'."""

    shares: BinVec
    fprime: Callable[[bytes], BinElem]
    key: amprf.AmPrfKey
    table: okvs.OkvsTable


def run_sender(session: Session, plist: ProgrammedList, width: int) -> SenderHandle:
    if plist.values.width != width:
        raise ValueError("programmed value width disagrees with invocation width")
    invocation = session.next_channel_index()
    rng = session.rng.child(f"soopprf:{invocation}")
    key = amprf.sample_key(rng.child("key"))

    f_shares = so_oprf(session, key=key, t_out=width)

    fk = amprf.eval_batch(session.mats, key, amprf.hash_inputs_batch(plist.keys), width)
    table = okvs.encode(plist.keys, plist.values ^ fk, rng.child("okvs"))
    session.channel.send(TAG_OKVS, invocation, table.to_bytes())

    def fprime(q: bytes) -> BinElem:
        return amprf.evaluate(session.mats, key, q, width) ^ okvs.decode_one(table, q)

    return SenderHandle(shares=f_shares, fprime=fprime, key=key, table=table)


def run_receiver(session: Session, queries: np.ndarray, width: int) -> BinVec:
    invocation = session.next_channel_index()

    f_shares = so_oprf(session, queries=queries, t_out=width)

    idx, body = session.channel.recv(TAG_OKVS)
    if idx != invocation:
        raise ProtocolAbort(f"soopprf: table arrived for invocation {idx}, expected {invocation}")
    table = okvs.OkvsTable.from_bytes(body, width)
    return f_shares ^ okvs.decode(table, queries)
