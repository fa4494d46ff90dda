"""End-to-end fuzzy intersection protocols.

All four variants share one skeleton: fuzzy mapping assigns identifiers (close
cross-party points get equal ones), then a refined filtering phase checks the
exact distance for every sender point against whichever receiver point shares
its identifier, and oblivious transfer releases exactly the passing points.

Refined filtering by metric:

- L-infinity: the receiver programs value 0 on every (id, dim, coordinate)
  within delta of its points; the sender queries its own coordinates.  Share
  sums across dimensions reconstruct to zero exactly for a close pair, checked
  by a private equality test.
- L_p: programmed values are |t|^p for offset t, converted to arithmetic
  shares, summed across dimensions, and compared against delta^p by a private
  interval test.
- Prefix variants program O(log delta) interval prefixes instead of 2*delta+1
  coordinates.  The sender queries all prefixes of its coordinate and an
  equality-conditional selection picks the one that matched.  For L_p the
  programmed value only carries the receiver-side distance to the prefix
  boundary; the sender adds its own distance to that boundary, using one
  shared multiplication per candidate for the p = 2 cross term.

Every batch within a protocol step travels as a single message, so round
counts are fixed and transcripts are deterministic functions of the seeds.
"""

from __future__ import annotations

import numpy as np

from fuzzypsi import prefix as prefix_mod
from fuzzypsi.core import MASK64, BinVec, Params, PointSet, check_point_bounds, validate
from fuzzypsi.eqsel import run_arith, run_bin
from fuzzypsi.fmap import (
    IdAssignment,
    fmap,
    fmap_prefix,
    prefix_field_bytes,
    _prefix_key_rows,
)
from fuzzypsi.functionalities import (
    RECEIVER,
    SENDER,
    b2a,
    dealer_hello,
    interval_test,
    mult_pub,
    ot_choose,
    ot_send,
    peqt,
)
from fuzzypsi.session import Session
from fuzzypsi.soopprf import ProgrammedList, pad_list, run_receiver, run_sender

KEY_TAG_FILTER = 0x03
KEY_TAG_FILTER_PREFIX = 0x04
KEY_TAG_FILTER_LP = 0x05

VALUE_BITS_FILTER_LINF = 64
COMPONENT_BITS = 64  # per-component width of prefix L_p programmed values


def filter_list_size_lp_prefix(n: int, d: int, delta: int) -> int:
    """Public size of the prefix L_p list: log(delta)+1 prefixes per half-interval.

    A half-interval of length delta or delta+1 decomposes into at most
    log(delta)+1 maximal blocks (an ascending and a descending run of distinct
    block sizes cannot fit more under that total length).
    """
    mu = (delta.bit_length() - 1) + 1
    return n * d * 2 * mu


def filter_list_size_linf_prefix(n: int, d: int, delta: int) -> int:
    return n * d * ((delta.bit_length() - 1) + 2)


def _id_rows(ids: IdAssignment) -> np.ndarray:
    n = len(ids)
    nb = ids.ids.width // 8
    return np.frombuffer(ids.ids.to_bytes(), dtype=np.uint8).reshape(n, nb)


def _filter_keys_coord(ids: IdAssignment, coords: np.ndarray, reps_per_point: int) -> np.ndarray:
    """Rows tag || id || dim || coordinate; caller supplies the (i, k, t) coordinate grid."""
    idr = _id_rows(ids)
    n, d = coords.shape[:2]
    id_bytes = idr.shape[1]
    rows = n * d * reps_per_point
    out = np.zeros((rows, 1 + id_bytes + 2 + 8), dtype=np.uint8)
    out[:, 0] = KEY_TAG_FILTER
    out[:, 1 : 1 + id_bytes] = np.repeat(idr, d * reps_per_point, axis=0)
    dims = np.tile(np.repeat(np.arange(d, dtype=np.uint16), reps_per_point), n)
    out[:, 1 + id_bytes : 3 + id_bytes] = dims.astype("<u2").view(np.uint8).reshape(rows, 2)
    out[:, 3 + id_bytes :] = coords.reshape(rows).astype("<u8").view(np.uint8).reshape(rows, 8)
    return out


def _offset_grid(points: PointSet, delta: int) -> np.ndarray:
    """(n, d, 2*delta+1) coordinate grid w + t for t in [-delta, delta]."""
    offs = np.arange(-delta, delta + 1, dtype=np.int64)
    return (points.coords.astype(np.int64)[:, :, None] + offs[None, None, :]).astype(np.uint64)


def _release(session: Session, points: PointSet, bits: np.ndarray | None) -> np.ndarray | None:
    """Final oblivious transfer: passing sender points go to the receiver."""
    d = session.params.d
    if session.role == SENDER:
        z1 = points.coords.astype("<u8").view(np.uint8).reshape(points.n, d * 8)
        ot_send(session, np.zeros_like(z1), z1)
        return None
    sel = ot_choose(session, bits, msg_len=d * 8)
    picked = sel[bits.astype(bool)]
    return picked.view("<u8").reshape(-1, d).astype(np.uint64)


def fpsi_linf(session: Session, points: PointSet) -> np.ndarray | None:
    params = session.params
    ids = fmap(session, points)
    width = VALUE_BITS_FILTER_LINF
    if session.role == RECEIVER:
        grid = _offset_grid(points, params.delta)
        keys = _filter_keys_coord(ids, grid, 2 * params.delta + 1)
        plist = ProgrammedList(keys, BinVec.zeros(keys.shape[0], width), keys.shape[0])
        shares = run_sender(session, plist, width).shares
    else:
        keys = _filter_keys_coord(ids, points.coords[:, :, None], 1)
        shares = run_receiver(session, keys, width)
    sums = shares.xor_reduce_groups(params.d)
    bits = peqt(session, sums)
    return _release(session, points, bits)


def fpsi_lp(session: Session, points: PointSet) -> np.ndarray | None:
    params = session.params
    p = params.p_int
    ids = fmap(session, points)
    width = params.value_bits
    if session.role == RECEIVER:
        grid = _offset_grid(points, params.delta)
        keys = _filter_keys_coord(ids, grid, 2 * params.delta + 1)
        tvals = np.abs(np.arange(-params.delta, params.delta + 1, dtype=np.int64)) ** p
        vals = BinVec.from_ints(np.tile(tvals, points.n * params.d), width)
        plist = ProgrammedList(keys, vals, keys.shape[0])
        shares = run_sender(session, plist, width).shares
    else:
        keys = _filter_keys_coord(ids, points.coords[:, :, None], 1)
        shares = run_receiver(session, keys, width)
    arith = b2a(session, shares)
    sums = np.sum(arith.reshape(-1, params.d), axis=1, dtype=np.uint64)
    bits = interval_test(session, sums, params.delta**p)
    return _release(session, points, bits)


def _prefix_filter_keys(tag: int, ids: IdAssignment, groups: list[tuple], u: int, with_sigma: bool) -> np.ndarray:
    """Rows tag || id || dim || [sigma ||] prefix.

    ``groups`` is a ragged list of (element index, dim, sigma, prefixes); rows
    come out in group order, prefixes in order within each group.
    """
    idr = _id_rows(ids)
    id_bytes = idr.shape[1]
    pf = prefix_field_bytes(u)
    extra = 1 if with_sigma else 0
    rows = sum(len(ps) for _, _, _, ps in groups)
    out = np.zeros((rows, 1 + id_bytes + 2 + extra + pf), dtype=np.uint8)
    out[:, 0] = tag
    at = 0
    for i, k, sg, ps in groups:
        block = _prefix_key_rows(0, k, ps, u)  # dim+prefix packing; tag/id overwritten here
        n_rows = len(ps)
        out[at : at + n_rows, 1 : 1 + id_bytes] = idr[i]
        out[at : at + n_rows, 1 + id_bytes : 3 + id_bytes] = block[:, 1:3]
        if with_sigma:
            out[at : at + n_rows, 3 + id_bytes] = sg
        out[at : at + n_rows, 3 + id_bytes + extra :] = block[:, 3:]
        at += n_rows
    return out


def fpsi_linf_prefix(session: Session, points: PointSet) -> np.ndarray | None:
    params = session.params
    log_delta = params.log_delta
    mu = log_delta + 2
    width = params.tag_bits + VALUE_BITS_FILTER_LINF
    ids = fmap_prefix(session, points)
    if session.role == RECEIVER:
        groups = [
            (i, k, 0, prefix_mod.decompose(int(c) - params.delta, int(c) + params.delta, params.u))
            for (i, k), c in np.ndenumerate(points.coords)
        ]
        keys = _prefix_filter_keys(KEY_TAG_FILTER_PREFIX, ids, groups, params.u, with_sigma=False)
        target = filter_list_size_linf_prefix(points.n, params.d, params.delta)
        plist = pad_list(keys, BinVec.zeros(keys.shape[0], width), target, session.rng.child("filter-pad"))
        shares = run_sender(session, plist, width).shares
    else:
        groups = [
            (j, k, 0, prefix_mod.all_prefix(int(c), mu - 1, params.u))
            for (j, k), c in np.ndenumerate(points.coords)
        ]
        keys = _prefix_filter_keys(KEY_TAG_FILTER_PREFIX, ids, groups, params.u, with_sigma=False)
        shares = run_receiver(session, keys, width)
    tags, vals = shares.split_words([params.tag_bits, VALUE_BITS_FILTER_LINF])
    selected = run_bin(session, tags, vals, mu, session.rng.child("filter-eqsel"))
    sums = selected.xor_reduce_groups(params.d)
    bits = peqt(session, sums)
    return _release(session, points, bits)


def get_list_p(ids: IdAssignment, points: PointSet, p: int, params: Params) -> tuple[np.ndarray, BinVec]:
    """Programmed list for prefix L_p filtering: per half-interval prefix, the
    distance from its outer bound back to the point (and its square for p=2)."""
    delta = params.delta
    mu = (delta.bit_length() - 1) + 1
    groups: list[tuple] = []
    dists: list[int] = []
    for (i, k), c in np.ndenumerate(points.coords):
        w = int(c)
        left = prefix_mod.decompose(w - delta, w, params.u)
        right = prefix_mod.decompose(w + 1, w + delta, params.u)
        if len(left) > mu or len(right) > mu:
            raise AssertionError("half-interval decomposition exceeded its public bound")
        groups.append((i, k, 0, left))
        dists.extend(w - prefix_mod.up_bound(q) for q in left)
        groups.append((i, k, 1, right))
        dists.extend(prefix_mod.low_bound(q) - w for q in right)
    keys = _prefix_filter_keys(KEY_TAG_FILTER_LP, ids, groups, params.u, with_sigma=True)
    width = params.tag_bits + p * COMPONENT_BITS
    darr = np.asarray(dists, dtype=np.uint64)
    words = [np.zeros(len(darr), dtype=np.uint64), darr]
    if p == 2:
        words.append((darr * darr) & MASK64)
    vals = BinVec(np.stack(words, axis=1), width)
    return keys, vals


def _sender_boundary_dists(points: PointSet, params: Params, mu: int) -> tuple[list[tuple], np.ndarray]:
    """The sender's candidate prefixes over both halves and its distance to each
    candidate's programmed boundary (upper bound on the left, lower on the right)."""
    groups: list[tuple] = []
    e_vals: list[int] = []
    for (j, k), c in np.ndenumerate(points.coords):
        q = int(c)
        ps = prefix_mod.all_prefix(q, mu - 1, params.u)
        for s in (0, 1):
            groups.append((j, k, s, ps))
            if s == 0:
                e_vals.extend(prefix_mod.up_bound(h) - q for h in ps)
            else:
                e_vals.extend(q - prefix_mod.low_bound(h) for h in ps)
    return groups, np.asarray(e_vals, dtype=np.uint64)


def fpsi_lp_prefix(session: Session, points: PointSet) -> np.ndarray | None:
    params = session.params
    p = params.p_int
    mu = params.log_delta + 1
    width = params.tag_bits + p * COMPONENT_BITS
    ids = fmap_prefix(session, points)

    e_vals = None
    if session.role == RECEIVER:
        keys, vals = get_list_p(ids, points, p, params)
        target = filter_list_size_lp_prefix(points.n, params.d, params.delta)
        plist = pad_list(keys, vals, target, session.rng.child("filter-pad"))
        shares = run_sender(session, plist, width).shares
    else:
        groups, e_vals = _sender_boundary_dists(points, params, mu)
        keys = _prefix_filter_keys(KEY_TAG_FILTER_LP, ids, groups, params.u, with_sigma=True)
        shares = run_receiver(session, keys, width)

    parts = shares.split_words([params.tag_bits] + [COMPONENT_BITS] * p)
    tags = parts[0]
    comps = [b2a(session, part) for part in parts[1:]]

    if p == 1:
        dshare = comps[0].copy()
        if session.role == SENDER:
            dshare = (dshare + e_vals) & MASK64
    else:
        s1, s2 = comps
        prod = mult_pub(session, e_vals if session.role == SENDER else s1)
        if session.role == SENDER:
            dshare = (e_vals * e_vals + 2 * e_vals * s1 + 2 * prod + s2) & MASK64
        else:
            dshare = (2 * prod + s2) & MASK64

    selected = run_arith(session, tags, dshare, 2 * mu, session.rng.child("filter-eqsel"))
    sums = np.sum(selected.reshape(-1, params.d), axis=1, dtype=np.uint64)
    bits = interval_test(session, sums, params.delta**p)
    return _release(session, points, bits)


VARIANT_FUNCS = {
    "linf": fpsi_linf,
    "lp": fpsi_lp,
    "linf-prefix": fpsi_linf_prefix,
    "lp-prefix": fpsi_lp_prefix,
}


def run_session(session: Session, points: PointSet) -> np.ndarray | None:
    """Validate, handshake, dispatch on the session variant."""
    validate(session.params)
    check_point_bounds(session.params, points)
    want = session.params.m if session.role == SENDER else session.params.n
    if points.n != want:
        raise ValueError(f"point count {points.n} disagrees with declared size {want}")
    session.handshake()
    dealer_hello(session, session.mats.seed)
    return VARIANT_FUNCS[session.variant](session, points)
