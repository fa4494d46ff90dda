"""Dataset generation, the brute-force oracle, end-to-end runners, and benchmarking.

The oracle here is the single source of truth for every end-to-end test in the
repository: it computes the intersection in plaintext by exact integer
arithmetic, directly from the definition.

Generated datasets satisfy the disjoint projection assumption by construction:
every point's first coordinate sits on its own anchor, anchors are spaced more
than 4*delta apart, matched receiver points perturb distinct sender anchors
within the metric ball, and unmatched receiver points live on a far-away
anchor lattice.  ``check_disjoint`` re-verifies the property post hoc.
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass, field
from hashlib import blake2b

import numpy as np

from fuzzypsi import transport
from fuzzypsi.amprf import expand_matrices
from fuzzypsi.core import CounterRng, Params, PointSet, ValidationError, validate
from fuzzypsi.functionalities import RECEIVER, SENDER, RemoteDealer, TrustedDealer, serve_dealer
from fuzzypsi.protocols import run_session
from fuzzypsi.session import Session
from fuzzypsi.transport import TAG_OKVS, inproc_pair, tcp_connect, tcp_listen_one


# -- oracle and assumptions ---------------------------------------------------


def oracle(q: PointSet, w: PointSet, delta: int, p: float = math.inf) -> np.ndarray:
    """Fig-2-style plaintext intersection: sender points within delta of some receiver point."""
    qc = q.coords.astype(np.int64)
    wc = w.coords.astype(np.int64)
    hit = np.zeros(q.n, dtype=bool)
    chunk = max(1, (1 << 22) // max(w.n * q.d, 1))
    for at in range(0, q.n, chunk):
        diff = np.abs(qc[at : at + chunk, None, :] - wc[None, :, :])
        if p == math.inf:
            ok = diff.max(axis=2) <= delta
        else:
            ok = np.sum(diff ** int(p), axis=2) <= delta ** int(p)
        hit[at : at + chunk] = ok.any(axis=1)
    return q.coords[hit]


def check_disjoint(points: PointSet, delta: int) -> tuple[int, int] | None:
    """Verify the disjoint projection assumption; returns a violating pair or None.

    For each point there must be some dimension where its radius-delta interval
    avoids every other point's.  Two coordinates conflict in a dimension when
    they differ by at most 2*delta.
    """
    c = points.coords.astype(np.int64)
    n, d = c.shape
    ok = np.zeros(n, dtype=bool)
    conflict_with = np.full((n, d), -1, dtype=np.int64)
    for k in range(d):
        order = np.argsort(c[:, k], kind="stable")
        vals = c[order, k]
        gap_prev = np.empty(n, dtype=np.int64)
        gap_next = np.empty(n, dtype=np.int64)
        gap_prev[0] = gap_next[-1] = 2 * delta + 1
        gap_prev[1:] = vals[1:] - vals[:-1]
        gap_next[:-1] = vals[1:] - vals[:-1]
        free = (gap_prev > 2 * delta) & (gap_next > 2 * delta)
        ok[order[free]] = True
        near = np.where(gap_prev <= 2 * delta)[0]
        conflict_with[order[near], k] = order[near - 1]
        near2 = np.where(gap_next <= 2 * delta)[0]
        conflict_with[order[near2], k] = order[near2 + 1]
    if ok.all():
        return None
    i = int(np.flatnonzero(~ok)[0])
    j = int(max(conflict_with[i]))
    return (i, j)


# -- dataset generation -------------------------------------------------------


def _ball_offset(d: int, delta: int, p: float, rng: CounterRng) -> np.ndarray:
    """An integer offset of metric norm at most delta (not uniform; coverage only)."""
    t = np.zeros(d, dtype=np.int64)
    if p == math.inf:
        t[:] = rng.integers(0, 2 * delta + 1, size=d).astype(np.int64) - delta
        return t
    remaining = delta ** int(p)
    dims = np.arange(d)
    rng.shuffle(dims)
    for k in dims:
        cap = int(remaining ** (1.0 / p))
        while (cap + 1) ** int(p) <= remaining:
            cap += 1
        while cap > 0 and cap ** int(p) > remaining:
            cap -= 1
        a = int(rng.integers(0, cap + 1))
        remaining -= a ** int(p)
        t[k] = a if int(rng.integers(0, 2)) else -a
    return t


def gen_dataset(params: Params, rho: float, rng: CounterRng) -> tuple[PointSet, PointSet, np.ndarray]:
    """Sets (Q, W) satisfying the disjoint projection assumption, with a rho
    fraction of W planted delta-close to distinct Q points; returns expected Z."""
    validate(params)
    m, n, d, delta, u = params.m, params.n, params.d, params.delta, params.u
    if not 0.0 <= rho <= 1.0:
        raise ValidationError("match fraction must be in [0, 1]")
    n_match = int(round(rho * n))
    if n_match > min(m, n):
        raise ValidationError("cannot plant more matches than min(m, n)")

    gap = 4 * delta + 8
    base = 2 * delta
    top = (1 << u) - 2 * delta
    if base + (m + n) * gap + 6 * delta >= top:
        raise ValidationError("coordinate domain too small for this set size and delta")

    lo, hi = 2 * delta, top
    q_coords = rng.integers(lo, hi, size=(m, d)).astype(np.uint64)
    slots = np.arange(m, dtype=np.int64)
    rng.shuffle(slots)
    q_coords[:, 0] = (base + slots * gap).astype(np.uint64)

    w_coords = np.zeros((n, d), dtype=np.uint64)
    anchors = np.arange(m, dtype=np.int64)
    rng.shuffle(anchors)
    anchors = anchors[:n_match]
    for i, j in enumerate(anchors):
        off = _ball_offset(d, delta, params.p, rng)
        if i == 0:
            off = np.zeros(d, dtype=np.int64)
            off[0] = delta  # one planted pair exactly on the threshold boundary
        w_coords[i] = (q_coords[j].astype(np.int64) + off).astype(np.uint64)

    base_b = base + m * gap + 4 * delta
    bslots = np.arange(n, dtype=np.int64)
    rng.shuffle(bslots)
    for i in range(n_match, n):
        w_coords[i] = rng.integers(lo, hi, size=d).astype(np.uint64)
        w_coords[i, 0] = np.uint64(base_b + bslots[i] * gap)

    perm = np.arange(n)
    rng.shuffle(perm)
    w_coords = w_coords[perm]

    q = PointSet(q_coords, u)
    w = PointSet(w_coords, u)
    if check_disjoint(q, delta) is not None or check_disjoint(w, delta) is not None:
        raise AssertionError("generator produced a set violating disjoint projection")
    expected = q.coords[np.sort(anchors)] if n_match else np.zeros((0, d), dtype=np.uint64)
    return q, w, expected


# -- dataset files ------------------------------------------------------------


def save_points(path: str, points: PointSet) -> None:
    with open(path, "w") as fh:
        fh.write(f"d={points.d} bits={points.u} n={points.n}\n")
        for row in points.coords:
            fh.write(" ".join(str(int(x)) for x in row) + "\n")


def load_points(path: str) -> PointSet:
    with open(path) as fh:
        header = dict(kv.split("=") for kv in fh.readline().split())
        d, u, n = int(header["d"]), int(header["bits"]), int(header["n"])
        coords = np.loadtxt(fh, dtype=np.uint64, ndmin=2)
    if coords.shape != (n, d):
        raise ValidationError(f"dataset file shape {coords.shape} does not match header")
    return PointSet(coords, u)


# -- runners ------------------------------------------------------------------


@dataclass
class RunResult:
    z: np.ndarray
    stats: dict
    sender_session: Session
    receiver_session: Session
    dealer: TrustedDealer | None = None


def matrix_seed_from(session_seed) -> bytes:
    raw = session_seed if isinstance(session_seed, bytes) else str(session_seed).encode()
    return blake2b(raw, digest_size=16, person=b"fpsi-mat").digest()


def _collect_stats(variant: str, params: Params, s_chan, r_chan, dealer_in: int, dealer_out: int, wall: float, z: np.ndarray) -> dict:
    return {
        "variant": variant,
        "m": params.m,
        "n": params.n,
        "d": params.d,
        "delta": params.delta,
        "p": "inf" if params.p == math.inf else int(params.p),
        "bytes_party": s_chan.bytes_sent + r_chan.bytes_sent,
        "bytes_okvs": s_chan.sent_by_tag.get(TAG_OKVS, 0) + r_chan.sent_by_tag.get(TAG_OKVS, 0),
        "bytes_sent_by_tag": {
            t.decode().strip("-"): s_chan.sent_by_tag.get(t, 0) + r_chan.sent_by_tag.get(t, 0)
            for t in set(s_chan.sent_by_tag) | set(r_chan.sent_by_tag)
        },
        "bytes_dealer": dealer_in + dealer_out,
        "wall_s": wall,
        "z_size": int(z.shape[0]),
    }


def run_protocol(
    variant: str,
    params: Params,
    q: PointSet,
    w: PointSet,
    session_seed=0,
    keep_dealer_log: bool = False,
) -> RunResult:
    """Run sender, receiver, and in-process dealer on threads; return Z and stats."""
    mats = expand_matrices(matrix_seed_from(session_seed))
    ch_s, ch_r = inproc_pair()
    dealer = TrustedDealer(_seed_label(session_seed, "dealer"), mats, keep_log=keep_dealer_log)
    sess = {
        SENDER: Session(SENDER, params, ch_s, dealer, CounterRng(_seed_label(session_seed, "sender")), mats, variant),
        RECEIVER: Session(RECEIVER, params, ch_r, dealer, CounterRng(_seed_label(session_seed, "receiver")), mats, variant),
    }
    out: dict = {}
    errors: dict = {}

    def party(role: int, pts: PointSet):
        try:
            out[role] = run_session(sess[role], pts)
        except BaseException as e:
            errors[role] = e
            dealer.poison(str(e))
            ch = sess[role].channel
            try:
                ch.send(transport.TAG_ABORT, 0, str(e).encode())
            except Exception:
                pass
            ch.close()

    t0 = time.monotonic()
    threads = [
        threading.Thread(target=party, args=(SENDER, q)),
        threading.Thread(target=party, args=(RECEIVER, w)),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.monotonic() - t0
    if errors:
        raise next(iter(errors.values()))
    z = out[RECEIVER]
    stats = _collect_stats(variant, params, ch_s, ch_r, dealer.bytes_in, dealer.bytes_out, wall, z)
    return RunResult(z, stats, sess[SENDER], sess[RECEIVER], dealer)


def _seed_label(seed, label: str) -> bytes:
    raw = seed if isinstance(seed, bytes) else str(seed).encode()
    return blake2b(raw + b"/" + label.encode(), digest_size=16).digest()


def run_protocol_tcp(
    variant: str,
    params: Params,
    q: PointSet,
    w: PointSet,
    session_seed=0,
    host: str = "127.0.0.1",
) -> RunResult:
    """Same protocol over three loopback TCP links (party pair + one per dealer side)."""
    mats = expand_matrices(matrix_seed_from(session_seed))
    dealer = TrustedDealer(_seed_label(session_seed, "dealer"), mats, keep_log=False)

    ports: dict = {}
    ready = threading.Event()
    chans: dict = {}
    errors: list = []

    def listener():
        import socket

        srv_party = socket.socket()
        srv_party.bind((host, 0))
        srv_party.listen(1)
        srv_dealer = socket.socket()
        srv_dealer.bind((host, 0))
        srv_dealer.listen(2)
        ports["party"] = srv_party.getsockname()[1]
        ports["dealer"] = srv_dealer.getsockname()[1]
        ready.set()
        conn, _ = srv_party.accept()
        chans["party_at_receiver"] = transport.TcpChannel(conn)
        d1, _ = srv_dealer.accept()
        d2, _ = srv_dealer.accept()
        chans["dealer_a"] = transport.TcpChannel(d1)
        chans["dealer_b"] = transport.TcpChannel(d2)
        srv_party.close()
        srv_dealer.close()

    lt = threading.Thread(target=listener)
    lt.start()
    ready.wait()

    ch_s = tcp_connect(host, ports["party"])
    dch_s = tcp_connect(host, ports["dealer"])
    dch_r = tcp_connect(host, ports["dealer"])
    lt.join()
    ch_r = chans["party_at_receiver"]

    # identify dealer-side channels by the first frame's role byte, then serve
    def dealer_loop():
        try:
            role_map = {}
            first = []
            for ch in (chans["dealer_a"], chans["dealer_b"]):
                tag, index, payload = ch.recv_any()
                role_map[payload[0]] = ch
                first.append((payload[0], tag, index, payload))

            def answer(role, tag, index, payload):
                try:
                    return b"\x01" + dealer.invoke(role, tag, index, payload)
                except transport.ProtocolAbort as e:
                    return b"\x00" + e.phase.encode()

            # the two hellos pair with each other; answer them from two threads
            hello_threads = [
                threading.Thread(target=lambda r=r, t=t, i=i, p=p: role_map[r].send(t, i, answer(r, t, i, p)))
                for r, t, i, p in first
            ]
            for t in hello_threads:
                t.start()
            for t in hello_threads:
                t.join()
            serve_dealer(role_map, dealer)
        except BaseException as e:  # pragma: no cover
            errors.append(e)

    dt = threading.Thread(target=dealer_loop, daemon=True)
    dt.start()

    sess = {
        SENDER: Session(SENDER, params, ch_s, RemoteDealer(dch_s), CounterRng(_seed_label(session_seed, "sender")), mats, variant),
        RECEIVER: Session(RECEIVER, params, ch_r, RemoteDealer(dch_r), CounterRng(_seed_label(session_seed, "receiver")), mats, variant),
    }
    out: dict = {}
    perr: dict = {}

    def party(role: int, pts: PointSet):
        try:
            out[role] = run_session(sess[role], pts)
        except BaseException as e:
            perr[role] = e

    t0 = time.monotonic()
    threads = [
        threading.Thread(target=party, args=(SENDER, q)),
        threading.Thread(target=party, args=(RECEIVER, w)),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.monotonic() - t0
    for ch in (ch_s, ch_r, dch_s, dch_r):
        ch.close()
    if perr:
        raise next(iter(perr.values()))
    if errors:
        raise errors[0]
    z = out[RECEIVER]
    stats = _collect_stats(variant, params, ch_s, ch_r, dealer.bytes_in, dealer.bytes_out, wall, z)
    return RunResult(z, stats, sess[SENDER], sess[RECEIVER], dealer)


# -- benchmarking -------------------------------------------------------------


def _as_set(arr: np.ndarray) -> set:
    return {tuple(int(x) for x in row) for row in arr}


def parse_sweep(spec: str) -> list[dict]:
    """Expand 'variant=linf;m=1024;delta=16,64' into one config dict per combination."""
    fields: dict[str, list[str]] = {}
    for part in spec.split(";"):
        if not part.strip():
            continue
        key, val = part.split("=", 1)
        fields[key.strip()] = [v.strip() for v in val.split(",")]
    configs = [{}]
    for key, vals in fields.items():
        configs = [dict(c, **{key: v}) for c in configs for v in vals]
    return configs


def bench(spec: str, seed=0) -> list[dict]:
    """Run a parameter sweep; one stats record per run, oracle-checked."""
    records = []
    for cfg in parse_sweep(spec):
        variant = cfg.get("variant", "linf")
        p = math.inf if variant.startswith("linf") else float(int(cfg.get("p", 2)))
        params = Params(
            m=int(cfg.get("m", 256)),
            n=int(cfg.get("n", 256)),
            d=int(cfg.get("d", 4)),
            delta=int(cfg.get("delta", 16)),
            p=p,
            u=int(cfg.get("bits", 32)),
            prefix="prefix" in variant,
        )
        rho = float(cfg.get("rho", 0.25))
        run_seed = cfg.get("seed", seed)
        rng = CounterRng(_seed_label(run_seed, f"bench:{json.dumps(cfg, sort_keys=True)}"))
        q, w, expected = gen_dataset(params, rho, rng)
        res = run_protocol(variant, params, q, w, session_seed=run_seed)
        rec = dict(res.stats)
        rec["seed"] = str(run_seed)
        rec["oracle_match"] = _as_set(res.z) == _as_set(oracle(q, w, params.delta, params.p))
        records.append(rec)
    return records
