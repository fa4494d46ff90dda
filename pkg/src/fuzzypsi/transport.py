"""Framed duplex channels with per-direction byte accounting.

A frame is an 8-byte ASCII tag, a 32-bit invocation index, a 32-bit payload
length, and the payload; all integers little-endian.  The same framing runs
over an in-process queue pair or a TCP socket, and both produce byte-identical
transcripts for identical sessions and seeds (the TCP connection preamble is a
transport-level handshake and is excluded from counters and transcripts).

Party-to-party traffic and dealer traffic use separate channel pairs so the
communication-scaling checks can isolate genuine protocol payload.
"""

from __future__ import annotations

import queue
import socket
import struct
import time
from hashlib import sha256

_HEADER = struct.Struct("<8sII")

TCP_PREAMBLE = b"FUZZYPSI-WIRE-01"  # 16-byte magic + version

TAG_HELLO = b"HELLO---"
TAG_ABORT = b"ABORT---"
TAG_OKVS = b"SOPPRF-D"
TAG_DEALER_HELLO = b"DEAL-HI-"
TAG_SO_OPRF = b"F-SOPRF-"
TAG_SI_OPRF = b"F-SIOPRF"
TAG_OT = b"F-OT----"
TAG_PEQT = b"F-PEQT--"
TAG_SSPEQT = b"F-SSPEQT"
TAG_MUX = b"F-MUX---"
TAG_B2A = b"F-B2A---"
TAG_INTERVAL = b"F-INTVL-"
TAG_MULT = b"F-MULT--"

TAG_REGISTRY = frozenset(
    {
        TAG_HELLO,
        TAG_ABORT,
        TAG_OKVS,
        TAG_DEALER_HELLO,
        TAG_SO_OPRF,
        TAG_SI_OPRF,
        TAG_OT,
        TAG_PEQT,
        TAG_SSPEQT,
        TAG_MUX,
        TAG_B2A,
        TAG_INTERVAL,
        TAG_MULT,
    }
)


class ChannelClosed(ConnectionError):
    pass


class DesyncError(RuntimeError):
    """The peer sent a frame with an unexpected tag: protocol desynchronization."""

    def __init__(self, expected: bytes, actual: bytes):
        super().__init__(f"expected frame {expected!r}, got {actual!r}")
        self.expected = expected
        self.actual = actual


class ProtocolAbort(RuntimeError):
    """The peer (or dealer) aborted, carrying the protocol phase where it happened."""

    def __init__(self, phase: str, dealer: bool = False):
        super().__init__(f"abort during {phase}")
        self.phase = phase
        self.dealer = dealer


class Channel:
    """One endpoint of a duplex framed link; owned by a single party."""

    def __init__(self):
        self.sent_by_tag: dict[bytes, int] = {}
        self.recv_by_tag: dict[bytes, int] = {}
        self.bytes_sent = 0
        self.bytes_received = 0
        self._sent_digest = sha256()
        self._recv_digest = sha256()

    # subclasses provide raw transport
    def _write(self, data: bytes) -> None:
        raise NotImplementedError

    def _read_exact(self, n: int) -> bytes:
        raise NotImplementedError

    def send(self, tag: bytes, index: int, payload: bytes) -> None:
        if tag not in TAG_REGISTRY:
            raise ValueError(f"unregistered frame tag {tag!r}")
        frame = _HEADER.pack(tag, index, len(payload)) + payload
        self._write(frame)
        self.bytes_sent += len(frame)
        self.sent_by_tag[tag] = self.sent_by_tag.get(tag, 0) + len(frame)
        self._sent_digest.update(frame)

    def recv(self, expect_tag: bytes) -> tuple[int, bytes]:
        header = self._read_exact(_HEADER.size)
        tag, index, length = _HEADER.unpack(header)
        payload = self._read_exact(length) if length else b""
        size = _HEADER.size + length
        self.bytes_received += size
        self.recv_by_tag[tag] = self.recv_by_tag.get(tag, 0) + size
        self._recv_digest.update(header + payload)
        if tag == TAG_ABORT and expect_tag != TAG_ABORT:
            raise ProtocolAbort(payload.decode("utf-8", "replace"))
        if tag != expect_tag:
            raise DesyncError(expect_tag, tag)
        return index, payload

    def recv_any(self) -> tuple[bytes, int, bytes]:
        """Receive whatever frame comes next (dealer serving loop)."""
        header = self._read_exact(_HEADER.size)
        tag, index, length = _HEADER.unpack(header)
        payload = self._read_exact(length) if length else b""
        size = _HEADER.size + length
        self.bytes_received += size
        self.recv_by_tag[tag] = self.recv_by_tag.get(tag, 0) + size
        self._recv_digest.update(header + payload)
        return tag, index, payload

    def sent_transcript(self) -> bytes:
        return self._sent_digest.digest()

    def recv_transcript(self) -> bytes:
        return self._recv_digest.digest()

    def close(self) -> None:
        pass


class InProcChannel(Channel):
    def __init__(self, tx: queue.Queue, rx: queue.Queue):
        super().__init__()
        self._tx = tx
        self._rx = rx
        self._buf = b""

    def _write(self, data: bytes) -> None:
        self._tx.put(data)

    def _read_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            chunk = self._rx.get()
            if chunk is None:
                raise ChannelClosed("peer closed")
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def close(self) -> None:
        self._tx.put(None)


def inproc_pair() -> tuple[InProcChannel, InProcChannel]:
    a, b = queue.Queue(), queue.Queue()
    return InProcChannel(a, b), InProcChannel(b, a)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket):
        super().__init__()
        self._sock = sock
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.sendall(TCP_PREAMBLE)
        peer = self._read_exact_raw(len(TCP_PREAMBLE))
        if peer != TCP_PREAMBLE:
            raise ConnectionError("peer spoke a different wire version")

    def _read_exact_raw(self, n: int) -> bytes:
        parts = []
        got = 0
        while got < n:
            chunk = self._sock.recv(min(n - got, 1 << 20))
            if not chunk:
                raise ChannelClosed("connection closed mid-frame")
            parts.append(chunk)
            got += len(chunk)
        return b"".join(parts)

    def _write(self, data: bytes) -> None:
        self._sock.sendall(data)

    def _read_exact(self, n: int) -> bytes:
        return self._read_exact_raw(n)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def tcp_listen_one(port: int, host: str = "127.0.0.1", timeout: float = 30.0):
    """Accept a single peer; returns (channel, bound_port)."""
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    srv.settimeout(timeout)
    conn, _ = srv.accept()
    srv.close()
    return TcpChannel(conn)


def tcp_connect(host: str, port: int, timeout: float = 30.0) -> TcpChannel:
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return TcpChannel(sock)
        except ConnectionRefusedError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)
