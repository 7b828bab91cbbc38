"""Binary message envelope and in-process transport for the federation.

Every byte exchanged between simulated parties goes through a
:class:`Transport` as an encoded :class:`RoundMessage`, so tests can audit
exactly what crossed the privacy boundary.

Wire layout (all little-endian)::

    u32 version | u64 round | u8 kind | u32 sender | u32 payload_len | payload
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from enum import IntEnum

from .errors import ProtocolError

PROTOCOL_VERSION = 1
SERVER_ID = 0xFFFFFFFF

_HEADER = struct.Struct("<IQBII")


class MessageKind(IntEnum):
    BROADCAST = 1
    CLIENT_UPDATE = 2
    MASKED_STAT_SHARE = 3
    STAT_BROADCAST = 4


@dataclass(frozen=True)
class RoundMessage:
    """One protocol message; ``payload`` is an opaque kind-specific blob."""

    version: int
    round: int
    kind: MessageKind
    sender: int
    payload: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.version < 2**32:
            raise ProtocolError(f"version {self.version} out of u32 range")
        if not 0 <= self.round < 2**64:
            raise ProtocolError(f"round {self.round} out of u64 range")
        if not 0 <= self.sender < 2**32:
            raise ProtocolError(f"sender {self.sender} out of u32 range")
        if not 0 <= len(self.payload) < 2**32:
            raise ProtocolError("payload too large for u32 length prefix")


def encode_message(msg: RoundMessage) -> bytes:
    head = _HEADER.pack(msg.version, msg.round, int(msg.kind), msg.sender, len(msg.payload))
    return head + msg.payload


def decode_message(data: bytes) -> RoundMessage:
    if len(data) < _HEADER.size:
        raise ProtocolError(f"message of {len(data)} bytes is shorter than the header")
    version, rnd, kind_raw, sender, plen = _HEADER.unpack_from(data, 0)
    if len(data) != _HEADER.size + plen:
        raise ProtocolError(
            f"payload length field says {plen}, frame carries {len(data) - _HEADER.size}"
        )
    try:
        kind = MessageKind(kind_raw)
    except ValueError:
        raise ProtocolError(f"unknown message kind {kind_raw}") from None
    return RoundMessage(version, rnd, kind, sender, data[_HEADER.size :])


def message_debug_dict(msg: RoundMessage) -> dict:
    """Structured-text rendering for transcripts and logs."""
    return {
        "version": msg.version,
        "round": msg.round,
        "kind": msg.kind.name.lower(),
        "sender": "server" if msg.sender == SERVER_ID else msg.sender,
        "payload_len": len(msg.payload),
        "payload_hex": msg.payload.hex(),
    }


def validate_message(
    msg: RoundMessage,
    expected_round: int,
    expected_kind: MessageKind,
    expected_version: int = PROTOCOL_VERSION,
) -> None:
    """Enforce round/version/kind discipline; raises ProtocolError."""
    if msg.version != expected_version:
        raise ProtocolError(
            f"version mismatch: got {msg.version}, expected {expected_version}"
        )
    if msg.round != expected_round:
        raise ProtocolError(
            f"round mismatch: got round {msg.round} during round {expected_round}"
        )
    if msg.kind != expected_kind:
        raise ProtocolError(
            f"kind mismatch: got {msg.kind.name}, expected {expected_kind.name}"
        )


class LoopbackTransport:
    """Synchronous in-process mailbox transport.

    Frames are stored encoded, so send/receive round-trips the real wire
    format.  With ``record=True`` every frame is also appended to
    ``transcript`` for auditing.
    """

    def __init__(self, record: bool = False):
        self._inboxes: dict[int, deque[bytes]] = {}
        self.record = record
        self.transcript: list[bytes] = []

    def send(self, to: int, msg: RoundMessage) -> None:
        frame = encode_message(msg)
        if self.record:
            self.transcript.append(frame)
        self._inboxes.setdefault(to, deque()).append(frame)

    def receive(self, party: int) -> RoundMessage:
        box = self._inboxes.get(party)
        if not box:
            raise ProtocolError(f"party {party} has no pending messages")
        return decode_message(box.popleft())

    def pending(self, party: int) -> int:
        return len(self._inboxes.get(party, ()))

    def drain(self, party: int) -> list[RoundMessage]:
        """Receive everything currently queued for ``party``."""
        out = []
        while self.pending(party):
            out.append(self.receive(party))
        return out
