"""Fuzzy mapping: assign identifiers so that close cross-party points agree.

Local mapping: per dimension, every point claims the interval of radius delta
around its coordinate and a fresh random value; overlapping claims merge, with
the newest value overwriting.  A point's partial identifier (pid) is the XOR
of the post-merge values covering its coordinates, and the per-dimension
claims become a programmable key-value list, either one key per covered
coordinate, or, in prefix mode, one key per prefix of a decomposition of the
merged interval into chunks of at most 2*delta+1 points.

Global mapping runs twice, symmetrically.  In each direction one party's list
is programmed through the shared-output OPPRF, the other party queries its own
coordinates (or coordinate prefixes), both XOR-fold their shares across
dimensions, and a shared-key shared-input OPRF turns the blinded sums plus the
querying party's own pid into identifiers that only the querying party learns.
A close pair feeds identical inputs into the same keyed PRF in both
directions, hence equal identifiers; the disjoint projection assumption makes
everyone else's inputs fresh and identifiers distinct.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from fuzzypsi import prefix as prefix_mod
from fuzzypsi.amprf import sample_key
from fuzzypsi.core import BinElem, BinVec, CounterRng, Params, PointSet
from fuzzypsi.eqsel import run_bin
from fuzzypsi.functionalities import RECEIVER, SENDER, si_oprf
from fuzzypsi.session import Session
from fuzzypsi.soopprf import ProgrammedList, pad_list, run_receiver, run_sender

KEY_TAG_FMAP = 0x01
KEY_TAG_FMAP_PREFIX = 0x02


@dataclass
class IdAssignment:
    ids: BinVec

    def __len__(self):
        return len(self.ids)


@dataclass
class LocalMapOutput:
    pids: BinVec
    plist: ProgrammedList
    registry: list[list[tuple[int, int, int]]]  # per dimension: sorted (lo, hi, value)


def list_size_plain(m: int, d: int, delta: int) -> int:
    return m * d * (2 * delta + 1)


def list_size_prefix(m: int, d: int, delta: int) -> int:
    log_delta = delta.bit_length() - 1
    return m * d * (log_delta + 2)


def _merge_registry(coords: np.ndarray, delta: int, r_vals: list[int]) -> list[list[tuple[int, int, int]]]:
    """Sweep points in order; each claims [c-delta, c+delta], merges overlaps, newest value wins."""
    m, d = coords.shape
    registry: list[list[tuple[int, int, int]]] = []
    for k in range(d):
        entries: list[tuple[int, int, int]] = []  # sorted by lo
        los: list[int] = []
        for j in range(m):
            c = int(coords[j, k])
            lo, hi = c - delta, c + delta
            r = r_vals[j * d + k]
            # locate the run of entries whose intervals intersect [lo, hi]
            i = bisect.bisect_left(los, lo)
            while i > 0 and entries[i - 1][1] >= lo:
                i -= 1
            j2 = i
            while j2 < len(entries) and entries[j2][0] <= hi:
                lo = min(lo, entries[j2][0])
                hi = max(hi, entries[j2][1])
                j2 += 1
            del entries[i:j2], los[i:j2]
            entries.insert(i, (lo, hi, r))
            los.insert(i, lo)
        registry.append(entries)
    return registry


def _registry_lookup(registry_k: list[tuple[int, int, int]], c: int) -> int:
    i = bisect.bisect_right(registry_k, (c, 2**96, 0)) - 1
    lo, hi, r = registry_k[i]
    if not lo <= c <= hi:
        raise AssertionError("coordinate not covered by its own registry")
    return r


def _coord_keys(tag: int, dim: int, coords: np.ndarray) -> np.ndarray:
    n = coords.shape[0]
    out = np.zeros((n, 11), dtype=np.uint8)
    out[:, 0] = tag
    out[:, 1] = dim & 0xFF
    out[:, 2] = dim >> 8
    out[:, 3:11] = coords.astype("<u8").view(np.uint8).reshape(n, 8)
    return out


def prefix_field_bytes(u: int) -> int:
    return 1 + (u + 7) // 8


def _prefix_key_rows(tag: int, dim: int, prefixes: list[prefix_mod.PrefixStr], u: int) -> np.ndarray:
    pf = prefix_field_bytes(u)
    out = np.zeros((len(prefixes), 3 + pf), dtype=np.uint8)
    out[:, 0] = tag
    out[:, 1] = dim & 0xFF
    out[:, 2] = dim >> 8
    for i, p in enumerate(prefixes):
        ser = prefix_mod.serialize(p)
        out[i, 3 : 3 + len(ser)] = np.frombuffer(ser, dtype=np.uint8)
    return out


def _rep_values(r_vals: list[int], counts: list[int], width: int) -> BinVec:
    vec = BinVec.from_elems([BinElem(v, width) for v in r_vals], width)
    return BinVec(np.repeat(vec.words, counts, axis=0), width)


def local_map(points: PointSet, params: Params, rng: CounterRng, prefix: bool) -> LocalMapOutput:
    m, d = points.n, points.d
    delta = params.delta
    id_bits = params.id_bits

    r_vec = rng.vec(m * d, id_bits)
    r_ints = [r_vec[i].value for i in range(m * d)]
    registry = _merge_registry(points.coords, delta, r_ints)

    pid_elems = []
    for j in range(m):
        acc = 0
        for k in range(d):
            acc ^= _registry_lookup(registry[k], int(points.coords[j, k]))
        pid_elems.append(BinElem(acc, id_bits))
    pids = BinVec.from_elems(pid_elems, id_bits)

    key_chunks: list[np.ndarray] = []
    val_r: list[int] = []
    val_counts: list[int] = []
    if not prefix:
        width = id_bits
        for k in range(d):
            for lo, hi, r in registry[k]:
                key_chunks.append(_coord_keys(KEY_TAG_FMAP, k, np.arange(lo, hi + 1, dtype=np.uint64)))
                val_r.append(r)
                val_counts.append(hi - lo + 1)
        target = list_size_plain(m, d, delta)
    else:
        width = params.tag_bits + id_bits
        chunk_len = 2 * delta + 1
        for k in range(d):
            for lo, hi, r in registry[k]:
                prefixes: list[prefix_mod.PrefixStr] = []
                at = lo
                while at <= hi:
                    end = min(at + chunk_len - 1, hi)
                    prefixes.extend(prefix_mod.decompose(at, end, params.u))
                    at = end + 1
                key_chunks.append(_prefix_key_rows(KEY_TAG_FMAP_PREFIX, k, prefixes, params.u))
                # programmed value is zero-tag || r
                val_r.append(r << params.tag_bits)
                val_counts.append(len(prefixes))
        target = list_size_prefix(m, d, delta)

    keys = np.concatenate(key_chunks, axis=0)
    values = _rep_values(val_r, val_counts, width)
    plist = pad_list(keys, values, target, rng.child("pad"), nonce=rng.child("nonce").bytes(8))
    return LocalMapOutput(pids=pids, plist=plist, registry=registry)


def _own_coord_queries(points: PointSet) -> np.ndarray:
    n, d = points.n, points.d
    rows = [_coord_keys(KEY_TAG_FMAP, k, points.coords[:, k]) for k in range(d)]
    # interleave to (i, k) order: element-major, dimension-minor
    out = np.stack(rows, axis=1).reshape(n * d, 11)
    return out


def _own_prefix_queries(points: PointSet, params: Params) -> tuple[np.ndarray, int]:
    n, d = points.n, points.d
    mu = params.log_delta + 2  # all prefixes dropping up to 1+log(delta) bits
    pf = prefix_field_bytes(params.u)
    out = np.zeros((n * d * mu, 3 + pf), dtype=np.uint8)
    at = 0
    for i in range(n):
        for k in range(d):
            ps = prefix_mod.all_prefix(int(points.coords[i, k]), mu - 1, params.u)
            out[at : at + mu] = _prefix_key_rows(KEY_TAG_FMAP_PREFIX, k, ps, params.u)
            at += mu
    return out, mu


def fmap(session: Session, points: PointSet) -> IdAssignment:
    """Fuzzy mapping over plain per-coordinate lists; both directions in fixed order."""
    params = session.params
    rng = session.rng.child("fmap")
    lm = local_map(points, params, rng.child("localmap"), prefix=False)
    k_share = sample_key(rng.child("key"))
    my_ids = None
    for programmer in (SENDER, RECEIVER):
        if session.role == programmer:
            handle = run_sender(session, lm.plist, width=params.id_bits)
            shares = handle.shares
        else:
            shares = run_receiver(session, _own_coord_queries(points), width=params.id_bits)
        sums = shares.xor_reduce_groups(params.d)
        learner = RECEIVER if programmer == SENDER else SENDER
        inputs = sums if session.role == programmer else sums ^ lm.pids
        ids = si_oprf(session, k_share, inputs, learner=learner, t_out=params.id_bits)
        if session.role == learner:
            my_ids = ids
    assert my_ids is not None
    return IdAssignment(my_ids)


def fmap_prefix(session: Session, points: PointSet) -> IdAssignment:
    """Fuzzy mapping over prefix-decomposed lists; equality-conditional selection per dimension."""
    params = session.params
    rng = session.rng.child("fmap")
    lm = local_map(points, params, rng.child("localmap"), prefix=True)
    k_share = sample_key(rng.child("key"))
    width = params.tag_bits + params.id_bits
    my_ids = None
    for direction, programmer in enumerate((SENDER, RECEIVER)):
        if session.role == programmer:
            handle = run_sender(session, lm.plist, width=width)
            shares = handle.shares
            mu = params.log_delta + 2
        else:
            queries, mu = _own_prefix_queries(points, params)
            shares = run_receiver(session, queries, width=width)
        tags, vals = shares.split_words([params.tag_bits, params.id_bits])
        selected = run_bin(session, tags, vals, mu, rng.child(f"eqsel:{direction}"))
        sums = selected.xor_reduce_groups(params.d)
        learner = RECEIVER if programmer == SENDER else SENDER
        inputs = sums if session.role == programmer else sums ^ lm.pids
        ids = si_oprf(session, k_share, inputs, learner=learner, t_out=params.id_bits)
        if session.role == learner:
            my_ids = ids
    assert my_ids is not None
    return IdAssignment(my_ids)
