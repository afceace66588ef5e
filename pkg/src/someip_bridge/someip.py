"""SOME/IP message codec.

Wire layout (16-byte header, all fields big-endian, payload appended verbatim)::

    0       2       4               8       10      12  13  14  15
    +-------+-------+---------------+-------+-------+---+---+---+---+
    |service|method |    length     |client |session|pv |iv |mt |rc |
    +-------+-------+---------------+-------+-------+---+---+---+---+

``length`` counts every byte after itself: the 8 remaining header bytes
plus the payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator

from .errors import BadProtocolVersion, InvalidHeader, Truncated

HEADER = struct.Struct(">HHIHHBBBB")
HEADER_SIZE = HEADER.size  # 16
LENGTH_OFFSET = 8  # bytes covered by ``length`` that belong to the header
PROTOCOL_VERSION = 1
EVENT_BIT = 0x8000

SD_SERVICE_ID = 0xFFFF
SD_METHOD_ID = 0x8100


class MessageType(IntEnum):
    REQUEST = 0x00
    REQUEST_NO_RETURN = 0x01
    NOTIFICATION = 0x02
    RESPONSE = 0x80
    ERROR = 0x81


class ReturnCode(IntEnum):
    OK = 0x00
    NOT_OK = 0x01
    UNKNOWN_SERVICE = 0x02
    WRONG_PROTOCOL_VERSION = 0x07
    WRONG_INTERFACE_VERSION = 0x08


@dataclass(frozen=True)
class SomeIpHeader:
    service_id: int
    method_id: int
    length: int
    client_id: int = 0
    session_id: int = 0
    protocol_version: int = PROTOCOL_VERSION
    interface_version: int = 1
    message_type: MessageType = MessageType.NOTIFICATION
    return_code: ReturnCode = ReturnCode.OK

    @property
    def is_event(self) -> bool:
        return bool(self.method_id & EVENT_BIT)


@dataclass(frozen=True)
class SomeIpMessage:
    header: SomeIpHeader
    payload: bytes = field(default=b"")

    @classmethod
    def build(cls, service_id, method_id, payload=b"", *, client_id=0, session_id=0,
              interface_version=1, message_type=MessageType.NOTIFICATION,
              return_code=ReturnCode.OK) -> "SomeIpMessage":
        """Construct a message with ``length`` derived from the payload."""
        payload = bytes(payload)
        header = SomeIpHeader(
            service_id=service_id,
            method_id=method_id,
            length=LENGTH_OFFSET + len(payload),
            client_id=client_id,
            session_id=session_id,
            interface_version=interface_version,
            message_type=MessageType(message_type),
            return_code=ReturnCode(return_code),
        )
        return cls(header, payload)


def _check_header(h: SomeIpHeader, payload_len: int) -> None:
    if h.length != LENGTH_OFFSET + payload_len:
        raise InvalidHeader(
            f"length field {h.length} inconsistent with payload of {payload_len} bytes"
        )
    if h.protocol_version != PROTOCOL_VERSION:
        raise InvalidHeader(f"protocol_version must be {PROTOCOL_VERSION}, got {h.protocol_version}")
    if h.message_type == MessageType.NOTIFICATION and not h.method_id & EVENT_BIT:
        raise InvalidHeader(f"notification with non-event method_id 0x{h.method_id:04x}")
    for name, bits in (("service_id", 16), ("method_id", 16), ("client_id", 16),
                       ("session_id", 16), ("interface_version", 8)):
        value = getattr(h, name)
        if not 0 <= value < (1 << bits):
            raise InvalidHeader(f"{name} out of range: {value}")


def encode_message(msg: SomeIpMessage) -> bytes:
    h = msg.header
    _check_header(h, len(msg.payload))
    return HEADER.pack(
        h.service_id, h.method_id, h.length, h.client_id, h.session_id,
        h.protocol_version, h.interface_version, int(h.message_type), int(h.return_code),
    ) + msg.payload


def decode_header(data) -> SomeIpHeader:
    if len(data) < HEADER_SIZE:
        raise Truncated(f"need {HEADER_SIZE} header bytes, got {len(data)}")
    sid, mid, length, cid, sess, pv, iv, mt, rc = HEADER.unpack_from(data)
    if pv != PROTOCOL_VERSION:
        raise BadProtocolVersion(f"protocol version {pv}")
    if length < LENGTH_OFFSET:
        raise InvalidHeader(f"length field {length} below minimum {LENGTH_OFFSET}")
    try:
        mtype = MessageType(mt)
        rcode = ReturnCode(rc)
    except ValueError as exc:
        raise InvalidHeader(str(exc)) from None
    return SomeIpHeader(sid, mid, length, cid, sess, pv, iv, mtype, rcode)


def decode_message(data) -> tuple[SomeIpMessage, bytes]:
    """Decode one message from the front of ``data``.

    Returns the message and whatever bytes follow it (the framing
    remainder, empty for an exact fit).
    """
    header = decode_header(data)
    end = LENGTH_OFFSET + header.length
    if len(data) < end:
        raise Truncated(f"length field declares {end} bytes, only {len(data)} available")
    mv = memoryview(data)
    return SomeIpMessage(header, bytes(mv[HEADER_SIZE:end])), bytes(mv[end:])


def iter_messages(data) -> Iterator[SomeIpMessage]:
    """Split a buffer holding back-to-back messages."""
    rest = bytes(data)
    while rest:
        msg, rest = decode_message(rest)
        yield msg


class SessionCounter:
    """Per-sender session ids: 1..0xFFFF, wrapping back to 1."""

    def __init__(self, start: int = 1):
        if not 1 <= start <= 0xFFFF:
            raise ValueError("session ids start in 1..0xFFFF")
        self._next = start

    def next(self) -> int:
        value = self._next
        self._next = 1 if value == 0xFFFF else value + 1
        return value

    def peek(self) -> int:
        return self._next
