"""Command-line entry points: gen, run, oracle, bench.

Exit codes: 0 ok, 2 validation failure, 3 protocol desync, 4 dealer abort.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from fuzzypsi import harness
from fuzzypsi.amprf import expand_matrices
from fuzzypsi.core import CounterRng, Params, ValidationError
from fuzzypsi.functionalities import RECEIVER, SENDER, RemoteDealer, TrustedDealer, serve_dealer
from fuzzypsi.protocols import run_session
from fuzzypsi.session import Session
from fuzzypsi.transport import DesyncError, ProtocolAbort, tcp_connect, tcp_listen_one

EXIT_VALIDATION = 2
EXIT_DESYNC = 3
EXIT_DEALER = 4


def _metric_p(metric: str, p_arg: int | None) -> float:
    if metric == "linf":
        return math.inf
    if metric == "l1":
        return 1.0
    if metric == "l2":
        return 2.0
    if metric == "lp":
        if p_arg is None:
            raise ValidationError("--p required with --metric lp")
        return float(p_arg)
    raise ValidationError(f"unknown metric {metric}")


def cmd_gen(args) -> int:
    params = Params(
        m=args.m, n=args.n, d=args.d, delta=args.delta, u=args.bits,
        p=_metric_p(args.metric, args.p),
    )
    rng = CounterRng(str(args.seed), b"gen")
    q, w, expected = harness.gen_dataset(params, args.rho, rng)
    harness.save_points(args.out_q, q)
    harness.save_points(args.out_w, w)
    print(f"wrote {q.n} sender points to {args.out_q}, {w.n} receiver points to {args.out_w}; "
          f"{expected.shape[0]} planted matches")
    return 0


def cmd_oracle(args) -> int:
    q = harness.load_points(args.set_q)
    w = harness.load_points(args.set_w)
    z = harness.oracle(q, w, args.delta, _metric_p(args.metric, args.p))
    for row in z:
        print(" ".join(str(int(x)) for x in row))
    return 0


def _host_port(spec: str) -> tuple[str, int]:
    host, _, port = spec.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_run(args) -> int:
    if args.role == "dealer":
        return _run_dealer(args)
    points = harness.load_points(args.set)
    p = math.inf if args.variant.startswith("linf") else float(args.p or 2)
    params = Params(
        m=args.m, n=args.n, d=points.d, delta=args.delta, p=p, u=points.u,
        prefix=args.variant.endswith("prefix"),
    )
    mats = expand_matrices(harness.matrix_seed_from(args.session_seed))
    role = SENDER if args.role == "sender" else RECEIVER
    if args.listen is not None:
        channel = tcp_listen_one(args.listen)
    elif args.connect:
        channel = tcp_connect(*_host_port(args.connect))
    else:
        raise ValidationError("party roles need --listen or --connect")
    dealer = RemoteDealer(tcp_connect(*_host_port(args.dealer)))
    rng = CounterRng(harness._seed_label(args.session_seed, args.role))
    session = Session(role, params, channel, dealer, rng, mats, args.variant)
    z = run_session(session, points)
    if role == RECEIVER and z is not None:
        for row in z:
            print(" ".join(str(int(x)) for x in row))
    if args.stats:
        rec = {
            "role": args.role,
            "variant": args.variant,
            "bytes_sent": channel.bytes_sent,
            "bytes_received": channel.bytes_received,
            "z_size": int(z.shape[0]) if z is not None else None,
        }
        with open(args.stats, "a") as fh:
            fh.write(json.dumps(rec) + "\n")
    channel.close()
    return 0


def _run_dealer(args) -> int:
    import socket

    mats = expand_matrices(harness.matrix_seed_from(args.session_seed))
    dealer = TrustedDealer(harness._seed_label(args.session_seed, "dealer"), mats, keep_log=False)
    srv = socket.socket()
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind(("0.0.0.0", args.listen))
    srv.listen(2)
    from fuzzypsi.transport import TcpChannel

    chans = []
    for _ in range(2):
        conn, _addr = srv.accept()
        chans.append(TcpChannel(conn))
    srv.close()
    role_map = {}
    first = []
    for ch in chans:
        tag, index, payload = ch.recv_any()
        role_map[payload[0]] = ch
        first.append((payload[0], tag, index, payload))
    import threading

    def answer(role, tag, index, payload):
        try:
            return b"\x01" + dealer.invoke(role, tag, index, payload)
        except ProtocolAbort as e:
            return b"\x00" + e.phase.encode()

    hello_threads = [
        threading.Thread(target=lambda r=r, t=t, i=i, p=p: role_map[r].send(t, i, answer(r, t, i, p)))
        for r, t, i, p in first
    ]
    for t in hello_threads:
        t.start()
    for t in hello_threads:
        t.join()
    serve_dealer(role_map, dealer)
    return 0


def cmd_bench(args) -> int:
    records = harness.bench(args.sweep, seed=args.seed)
    out = open(args.out, "a") if args.out else sys.stdout
    for rec in records:
        out.write(json.dumps(rec) + "\n")
    if args.out:
        out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fuzzypsi")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a dataset pair satisfying the input assumption")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--delta", type=int, required=True)
    g.add_argument("--bits", type=int, default=32)
    g.add_argument("--rho", type=float, default=0.25)
    g.add_argument("--seed", default="0")
    g.add_argument("--metric", default="linf", choices=["linf", "l1", "l2", "lp"])
    g.add_argument("--p", type=int)
    g.add_argument("--out-q", required=True)
    g.add_argument("--out-w", required=True)
    g.set_defaults(fn=cmd_gen)

    r = sub.add_parser("run", help="run one protocol role over TCP")
    r.add_argument("--role", required=True, choices=["sender", "receiver", "dealer"])
    r.add_argument("--variant", default="linf", choices=["linf", "lp", "linf-prefix", "lp-prefix"])
    r.add_argument("--p", type=int)
    r.add_argument("--m", type=int)
    r.add_argument("--n", type=int)
    r.add_argument("--delta", type=int)
    r.add_argument("--connect")
    r.add_argument("--listen", type=int)
    r.add_argument("--dealer", help="host:port of the dealer endpoint")
    r.add_argument("--set", help="dataset file for this party")
    r.add_argument("--stats", help="append one JSON stats record here")
    r.add_argument("--session-seed", default="0")
    r.set_defaults(fn=cmd_run)

    o = sub.add_parser("oracle", help="plaintext intersection of two dataset files")
    o.add_argument("--metric", default="linf", choices=["linf", "l1", "l2", "lp"])
    o.add_argument("--delta", type=int, required=True)
    o.add_argument("--p", type=int)
    o.add_argument("--set-q", required=True)
    o.add_argument("--set-w", required=True)
    o.set_defaults(fn=cmd_oracle)

    b = sub.add_parser("bench", help="run a sweep and emit one JSON record per run")
    b.add_argument("--sweep", required=True, help="e.g. 'variant=linf;m=1024;n=1024;d=4;delta=16,64'")
    b.add_argument("--seed", default="0")
    b.add_argument("--out")
    b.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except DesyncError as e:
        print(f"desync: {e}", file=sys.stderr)
        return EXIT_DESYNC
    except ProtocolAbort as e:
        print(f"abort: {e}", file=sys.stderr)
        return EXIT_DEALER if e.dealer else EXIT_DESYNC


if __name__ == "__main__":
    sys.exit(main())
