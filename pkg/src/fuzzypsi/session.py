"""Per-party protocol session state: role, parameters, endpoints, randomness."""

from __future__ import annotations

from dataclasses import dataclass, field

from fuzzypsi.amprf import AmPrfMatrices
from fuzzypsi.core import CounterRng, Params
from fuzzypsi.transport import TAG_HELLO, Channel

SENDER = 0
RECEIVER = 1

TRANSCRIPT_VERSION = 1

VARIANT_IDS = {"linf": 1, "lp": 2, "linf-prefix": 3, "lp-prefix": 4}


@dataclass
class Session:
    """Everything one party needs to run a protocol: immutable after handshake."""

    role: int
    params: Params
    channel: Channel
    dealer: object  # anything with invoke(role, tag, index, payload)
    rng: CounterRng
    mats: AmPrfMatrices
    variant: str = "linf"
    dealer_index: int = field(default=0)
    channel_index: int = field(default=0)

    def dealer_call(self, tag: bytes, payload: bytes) -> bytes:
        idx = self.dealer_index
        self.dealer_index += 1
        return self.dealer.invoke(self.role, tag, idx, payload)

    def next_channel_index(self) -> int:
        idx = self.channel_index
        self.channel_index += 1
        return idx

    def hello_payload(self) -> bytes:
        body = (
            bytes([TRANSCRIPT_VERSION, VARIANT_IDS[self.variant]])
            + self.mats.seed
            + self.params.to_text().encode()
        )
        return body

    def handshake(self) -> None:
        """Sender states the session; receiver checks it matches its own and echoes."""
        from fuzzypsi.transport import ProtocolAbort

        mine = self.hello_payload()
        if self.role == SENDER:
            self.channel.send(TAG_HELLO, self.next_channel_index(), mine)
            _, theirs = self.channel.recv(TAG_HELLO)
        else:
            _, theirs = self.channel.recv(TAG_HELLO)
            self.channel.send(TAG_HELLO, self.next_channel_index(), mine)
        if theirs != mine:
            raise ProtocolAbort("handshake: session parameters disagree")
