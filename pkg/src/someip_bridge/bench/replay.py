"""Trace files: record bus samples (or SOME/IP datagrams) and replay them.

Layout::

    magic   7 bytes  b"SBTRACE"
    version u8       1
    records, each:
        length  u32 BE   size of the body that follows
        kind    u8       0 topic declaration, 1 bus sample, 2 SOME/IP datagram
        t_ns    u64 BE   capture time, monotonic nanoseconds
        name_len u16 BE
        name    utf-8    topic name, or "address:port" of a datagram's source
        payload          type name (kind 0), sample bytes (1), datagram bytes (2)

A topic is declared once before its first sample.
"""

from __future__ import annotations

import enum
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from ..bus import Bus, Topic
from ..errors import CorruptTraceFile

MAGIC = b"SBTRACE"
VERSION = 1
_LEN = struct.Struct(">I")
_HEAD = struct.Struct(">BQH")
MAX_RECORD = 1 << 30


class RecordKind(enum.IntEnum):
    TOPIC = 0
    BUS_SAMPLE = 1
    DATAGRAM = 2


@dataclass(frozen=True)
class TraceRecord:
    kind: RecordKind
    t_ns: int
    name: str
    payload: bytes


class TraceWriter:
    def __init__(self, fp):
        self.fp = fp
        self.count = 0
        self._declared: dict = {}
        self._lock = threading.Lock()
        fp.write(MAGIC + bytes([VERSION]))

    def _record(self, kind: RecordKind, t_ns: int, name: str, payload) -> None:
        raw = name.encode("utf-8")
        body_len = _HEAD.size + len(raw) + len(payload)
        self.fp.write(_LEN.pack(body_len) + _HEAD.pack(kind, t_ns, len(raw)) + raw)
        self.fp.write(payload)
        self.count += 1

    def declare(self, topic: str, type_name: str, t_ns: Optional[int] = None) -> None:
        with self._lock:
            if self._declared.get(topic) == type_name:
                return
            self._declared[topic] = type_name
            self._record(RecordKind.TOPIC, t_ns or time.monotonic_ns(), topic,
                         type_name.encode("utf-8"))

    def sample(self, topic: str, payload, t_ns: Optional[int] = None) -> None:
        with self._lock:
            if topic not in self._declared:
                raise ValueError(f"topic {topic!r} not declared")
            self._record(RecordKind.BUS_SAMPLE, t_ns or time.monotonic_ns(), topic, payload)

    def datagram(self, source: str, data, t_ns: Optional[int] = None) -> None:
        with self._lock:
            self._record(RecordKind.DATAGRAM, t_ns or time.monotonic_ns(), source, data)


def _read_exact(fp, n: int, what: str) -> bytes:
    data = fp.read(n)
    if len(data) != n:
        raise CorruptTraceFile(f"truncated {what}: wanted {n} bytes, got {len(data)}")
    return data


def read_trace(fp) -> Iterator[TraceRecord]:
    """Yield records; raises CorruptTraceFile on any structural problem."""
    head = fp.read(len(MAGIC) + 1)
    if len(head) < len(MAGIC) + 1 or head[:len(MAGIC)] != MAGIC:
        raise CorruptTraceFile("bad magic")
    if head[-1] != VERSION:
        raise CorruptTraceFile(f"unsupported trace version {head[-1]}")
    declared: dict = {}
    while True:
        prefix = fp.read(_LEN.size)
        if not prefix:
            return
        if len(prefix) != _LEN.size:
            raise CorruptTraceFile("truncated record length")
        (length,) = _LEN.unpack(prefix)
        if length < _HEAD.size or length > MAX_RECORD:
            raise CorruptTraceFile(f"bad record length {length}")
        body = _read_exact(fp, length, "record")
        kind, t_ns, name_len = _HEAD.unpack_from(body)
        if _HEAD.size + name_len > length:
            raise CorruptTraceFile("name overruns record")
        try:
            kind = RecordKind(kind)
            name = body[_HEAD.size:_HEAD.size + name_len].decode("utf-8")
        except (ValueError, UnicodeDecodeError) as exc:
            raise CorruptTraceFile(f"bad record: {exc}") from None
        payload = body[_HEAD.size + name_len:]
        if kind is RecordKind.TOPIC:
            declared[name] = payload.decode("utf-8", "replace")
        elif kind is RecordKind.BUS_SAMPLE and name not in declared:
            raise CorruptTraceFile(f"sample for undeclared topic {name!r}")
        yield TraceRecord(kind, t_ns, name, payload)


def load_trace(path) -> list:
    with open(path, "rb") as fp:
        return list(read_trace(fp))


class Recorder:
    """Subscribe to bus topics and append every sample to a trace file."""

    def __init__(self, bus: Bus, path, topics):
        self.path = Path(path)
        self._fp = open(self.path, "wb")
        self.writer = TraceWriter(self._fp)
        self.subscribers = []
        for topic in topics:
            self.writer.declare(topic.name, topic.type_name)
            self.subscribers.append(bus.create_subscriber(
                topic, lambda s, name=topic.name: self.writer.sample(name, s.payload,
                                                                     s.timestamp_ns)))

    @property
    def samples(self) -> int:
        return self.writer.count - len(self.writer._declared)

    def close(self) -> None:
        for sub in self.subscribers:
            sub.close()
        self.subscribers = []
        if not self._fp.closed:
            self._fp.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def replay(records, bus: Bus, *, timing: bool = True, speed: float = 1.0,
           sleep=time.sleep, clock=time.monotonic_ns) -> int:
    """Republish every bus sample; returns the number published.

    With ``timing`` the original gaps between samples are kept (divided by
    ``speed``); otherwise samples go out back to back.
    """
    publishers: dict = {}
    published = 0
    first_t = None
    start = None
    for rec in records:
        if rec.kind is RecordKind.TOPIC:
            if rec.name not in publishers:
                publishers[rec.name] = bus.create_publisher(
                    Topic(rec.name, rec.payload.decode("utf-8")))
            continue
        if rec.kind is not RecordKind.BUS_SAMPLE:
            continue
        if timing:
            if first_t is None:
                first_t, start = rec.t_ns, clock()
            due = start + (rec.t_ns - first_t) / speed
            wait = (due - clock()) / 1e9
            if wait > 0:
                sleep(wait)
        publishers[rec.name].publish(rec.payload)
        published += 1
    return published
