"""SOME/IP-SD payload encoding.

Payload layout::

    flags(1) reserved(3) entries_len(4) entries(16 each) options_len(4) options

Service entries (Find/Offer)::

    type(1) idx1(1) idx2(1) nopts(1) service(2) instance(2) major(1) ttl(3) minor(4)

Eventgroup entries (Subscribe/SubscribeAck)::

    type(1) idx1(1) idx2(1) nopts(1) service(2) instance(2) major(1) ttl(3)
    reserved(2) eventgroup(2)

Endpoints travel as IPv4 endpoint options (12 bytes, UDP only) referenced
from the first option run of the entry.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple, Optional

from .errors import MalformedEntry
from .net import Endpoint
from .someip import SD_METHOD_ID, SD_SERVICE_ID, MessageType, SomeIpMessage

ANY_INSTANCE = 0xFFFF
ANY_MAJOR = 0xFF
ANY_MINOR = 0xFFFFFFFF
MAX_TTL = 0xFFFFFF

FLAG_REBOOT = 0x80
FLAG_UNICAST = 0x40

_ENTRY = struct.Struct(">BBBBHHB3s4s")
_OPTION_IPV4 = struct.Struct(">HBB4sBBH")
_IPV4_OPTION_TYPE = 0x04
_IPV4_OPTION_LEN = 0x0009
_UDP = 0x11
ENTRY_SIZE = 16
OPTION_SIZE = 12


class EntryType(IntEnum):
    FIND_SERVICE = 0x00
    OFFER_SERVICE = 0x01
    SUBSCRIBE_EVENTGROUP = 0x06
    SUBSCRIBE_EVENTGROUP_ACK = 0x07

    @property
    def is_eventgroup(self) -> bool:
        return self in (EntryType.SUBSCRIBE_EVENTGROUP, EntryType.SUBSCRIBE_EVENTGROUP_ACK)


class ServiceKey(NamedTuple):
    service_id: int
    instance_id: int

    def __str__(self) -> str:
        return f"0x{self.service_id:04x}.0x{self.instance_id:04x}"

    def matches(self, other: "ServiceKey") -> bool:
        """Exact match, with 0xFFFF on either instance acting as a wildcard."""
        if self.service_id != other.service_id:
            return False
        return (self.instance_id == other.instance_id
                or ANY_INSTANCE in (self.instance_id, other.instance_id))


@dataclass(frozen=True)
class SdEntry:
    entry_type: EntryType
    key: ServiceKey
    major_version: int = 1
    ttl: int = 3
    minor_version: int = 0
    eventgroup_id: Optional[int] = None
    endpoint: Optional[Endpoint] = None

    def __post_init__(self):
        if self.entry_type.is_eventgroup != (self.eventgroup_id is not None):
            raise ValueError("eventgroup_id is required on subscribe entries and forbidden elsewhere")
        if not 0 <= self.ttl <= MAX_TTL:
            raise ValueError(f"ttl out of 24-bit range: {self.ttl}")

    @property
    def is_stop(self) -> bool:
        return self.ttl == 0


@dataclass(frozen=True)
class SdMessage:
    entries: tuple = ()
    reboot: bool = False
    session_id: int = 1
    # entries dropped by the decoder; bookkeeping only
    skipped: int = field(default=0, compare=False)


def _pack_endpoint(ep: Endpoint) -> bytes:
    return _OPTION_IPV4.pack(_IPV4_OPTION_LEN, _IPV4_OPTION_TYPE, 0,
                             ipaddress.IPv4Address(ep.address).packed, 0, _UDP, ep.port)


def encode_sd(msg: SdMessage) -> bytes:
    options: list[Endpoint] = []
    entries = bytearray()
    for e in msg.entries:
        if e.endpoint is not None:
            if e.endpoint not in options:
                options.append(e.endpoint)
            idx1, nopts = options.index(e.endpoint), 0x10
        else:
            idx1, nopts = 0, 0
        if e.entry_type.is_eventgroup:
            tail = struct.pack(">HH", 0, e.eventgroup_id)
        else:
            tail = struct.pack(">I", e.minor_version)
        entries += _ENTRY.pack(int(e.entry_type), idx1, 0, nopts, e.key.service_id,
                               e.key.instance_id, e.major_version,
                               e.ttl.to_bytes(3, "big"), tail)
    opts = b"".join(_pack_endpoint(ep) for ep in options)
    flags = FLAG_UNICAST | (FLAG_REBOOT if msg.reboot else 0)
    return (struct.pack(">B3xI", flags, len(entries)) + bytes(entries)
            + struct.pack(">I", len(opts)) + opts)


def _parse_options(data: bytes) -> list:
    out = []
    pos = 0
    while pos < len(data):
        if pos + 3 > len(data):
            raise MalformedEntry("truncated option header")
        length, otype = struct.unpack_from(">HB", data, pos)
        end = pos + 3 + length
        if end > len(data):
            raise MalformedEntry("option overruns options array")
        if otype == _IPV4_OPTION_TYPE and length == _IPV4_OPTION_LEN:
            _, _, _, addr, _, proto, port = _OPTION_IPV4.unpack_from(data, pos)
            out.append(Endpoint(str(ipaddress.IPv4Address(addr)), port) if proto == _UDP else None)
        else:
            out.append(None)
        pos = end
    return out


def decode_sd(payload) -> SdMessage:
    """Decode an SD payload.

    Structural damage (bad lengths) raises MalformedEntry; individual
    entries that cannot be interpreted are skipped and counted.
    """
    payload = bytes(payload)
    if len(payload) < 12:
        raise MalformedEntry(f"SD payload too short ({len(payload)} bytes)")
    flags, entries_len = struct.unpack_from(">B3xI", payload)
    if entries_len % ENTRY_SIZE or 8 + entries_len + 4 > len(payload):
        raise MalformedEntry(f"bad entries array length {entries_len}")
    opt_pos = 8 + entries_len
    (options_len,) = struct.unpack_from(">I", payload, opt_pos)
    if opt_pos + 4 + options_len != len(payload):
        raise MalformedEntry(f"bad options array length {options_len}")
    options = _parse_options(payload[opt_pos + 4:])

    entries = []
    skipped = 0
    for pos in range(8, 8 + entries_len, ENTRY_SIZE):
        etype, idx1, _idx2, nopts, sid, iid, major, ttl_b, tail = _ENTRY.unpack_from(payload, pos)
        try:
            entry_type = EntryType(etype)
        except ValueError:
            skipped += 1
            continue
        ttl = int.from_bytes(ttl_b, "big")
        n1 = nopts >> 4
        endpoint = None
        if n1:
            if idx1 >= len(options) or options[idx1] is None:
                skipped += 1
                continue
            endpoint = options[idx1]
        needs_endpoint = entry_type in (EntryType.OFFER_SERVICE, EntryType.SUBSCRIBE_EVENTGROUP)
        if needs_endpoint and ttl and endpoint is None:
            skipped += 1
            continue
        key = ServiceKey(sid, iid)
        if entry_type.is_eventgroup:
            (_, eventgroup) = struct.unpack(">HH", tail)
            entries.append(SdEntry(entry_type, key, major, ttl, eventgroup_id=eventgroup,
                                   endpoint=endpoint))
        else:
            (minor,) = struct.unpack(">I", tail)
            entries.append(SdEntry(entry_type, key, major, ttl, minor_version=minor,
                                   endpoint=endpoint))
    return SdMessage(tuple(entries), bool(flags & FLAG_REBOOT), 1, skipped)


def sd_to_someip(msg: SdMessage) -> SomeIpMessage:
    return SomeIpMessage.build(SD_SERVICE_ID, SD_METHOD_ID, encode_sd(msg),
                               session_id=msg.session_id, interface_version=1,
                               message_type=MessageType.NOTIFICATION)


def is_sd(msg: SomeIpMessage) -> bool:
    return msg.header.service_id == SD_SERVICE_ID and msg.header.method_id == SD_METHOD_ID


def someip_to_sd(msg: SomeIpMessage) -> SdMessage:
    if not is_sd(msg):
        raise MalformedEntry("not an SD message")
    sd = decode_sd(msg.payload)
    return SdMessage(sd.entries, sd.reboot, msg.header.session_id, sd.skipped)
