"""Random equality-conditional selection.

Each party holds h candidate (tag-share, value-share) pairs per selection slot
and at most one candidate's tag reconstructs to zero.  The parties obtain
fresh shares of the matching candidate's value, or shares of a value that is
uniform and independent of every candidate when nothing matches.

Realization: a shared-output equality test per candidate gives shared match
bits; one multiplexer round gates each value by its match bit, so the share
sums collapse to the matched value (or zero); a second multiplexer round,
gated by the XOR of all match bits, swaps in locally sampled randomness when
no candidate matched.  Both binary (XOR) and mod-2^64 value domains run
through the same circuit; only the gating algebra changes.

Selections are batched: candidates are laid out h consecutive rows per slot.
"""

from __future__ import annotations

import numpy as np

from fuzzypsi.core import MASK64, BinVec, CounterRng
from fuzzypsi.functionalities import mux_arith, mux_bin, sspeqt
from fuzzypsi.session import Session


def run_bin(session: Session, tags: BinVec, values: BinVec, h: int, rng: CounterRng) -> BinVec:
    """Batched selection over the binary domain; returns one share per slot."""
    total = len(tags)
    if total % h != 0 or len(values) != total:
        raise ValueError("candidate batch not a multiple of the arity")
    slots = total // h

    b = sspeqt(session, tags)
    t = mux_bin(session, b, values)

    b_slot = np.bitwise_xor.reduce(b.reshape(slots, h), axis=1)
    t_slot = t.xor_reduce_groups(h)

    r = rng.vec(slots, values.width)
    m = mux_bin(session, b_slot, t_slot ^ r)
    return m ^ r


def run_arith(session: Session, tags: BinVec, values: np.ndarray, h: int, rng: CounterRng) -> np.ndarray:
    """Batched selection with mod-2^64 value shares (tags stay binary)."""
    total = len(tags)
    if total % h != 0 or values.shape[0] != total:
        raise ValueError("candidate batch not a multiple of the arity")
    slots = total // h

    b = sspeqt(session, tags)
    t = mux_arith(session, b, values)

    b_slot = np.bitwise_xor.reduce(b.reshape(slots, h), axis=1)
    t_slot = np.sum(t.reshape(slots, h), axis=1, dtype=np.uint64)

    r = rng.words(slots)
    m = mux_arith(session, b_slot, (t_slot - r) & MASK64)
    return (m + r) & MASK64
