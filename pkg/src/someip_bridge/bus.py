"""A small DDS-style topic bus.

Publishers and subscribers never address each other: a sample published
on a topic reaches whichever subscribers are matched at that moment
(volatile durability, so late joiners only see later samples).  Matching
is by topic name, and the type name must agree.

Two transports:

``inproc``
    Samples are handed to subscriber callbacks directly (lossless).
``udp``
    Each subscriber owns a loopback UDP socket and a reader thread; samples
    are cut into fragments of at most ``fragment_size`` bytes, each behind
    a 16-byte header ``topic_hash(4) seq(8) index(2) count(2)``, and
    reassembled on the receiving side.  The reassembled body is an 8-byte
    publish timestamp followed by the payload.
"""

from __future__ import annotations

import itertools
import logging
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import BusClosed, TypeMismatch
from .net import set_buffers

log = logging.getLogger(__name__)

FRAME = struct.Struct(">IQHH")
FRAME_HEADER_SIZE = FRAME.size  # 16
DEFAULT_FRAGMENT = 16 * 1024
_STAMP = struct.Struct(">Q")


@dataclass(frozen=True)
class Topic:
    name: str
    type_name: str

    @property
    def hash(self) -> int:
        return zlib.crc32(self.name.encode("utf-8"))


@dataclass(frozen=True)
class BusSample:
    topic: str
    seq: int
    payload: bytes
    timestamp_ns: int


def fragment(topic_hash: int, seq: int, body: bytes, size: int = DEFAULT_FRAGMENT) -> list:
    """Cut ``body`` into framed chunks of at most ``size`` payload bytes."""
    view = memoryview(body)
    count = max(1, -(-len(body) // size))
    if count > 0xFFFF:
        raise ValueError(f"sample of {len(body)} bytes needs more than 65535 fragments")
    return [FRAME.pack(topic_hash, seq, i, count) + view[i * size:(i + 1) * size]
            for i in range(count)]


class Reassembler:
    """Rebuild samples from fragments; counts samples lost on the way."""

    def __init__(self):
        self._partial: dict = {}
        self._last_seq: dict = {}
        self.dropped = 0

    def feed(self, frame: bytes, source) -> Optional[tuple]:
        if len(frame) < FRAME_HEADER_SIZE:
            self.dropped += 1
            return None
        topic_hash, seq, index, count = FRAME.unpack_from(frame)
        key = (source, topic_hash)
        state = self._partial.get(key)
        if state is not None and state[0] != seq:
            self.dropped += 1
            self._last_seq[key] = state[0]  # counted; not a gap as well
            state = None
        if state is None:
            last = self._last_seq.get(key)
            if last is not None and seq > last + 1:
                self.dropped += seq - last - 1
            state = self._partial[key] = [seq, count, {}]
        state[2][index] = frame[FRAME_HEADER_SIZE:]
        if len(state[2]) < count:
            return None
        del self._partial[key]
        self._last_seq[key] = seq
        body = b"".join(state[2][i] for i in range(count))
        return topic_hash, seq, body


class Publisher:
    _ids = itertools.count(1)

    def __init__(self, bus: "Bus", topic: Topic):
        self.bus = bus
        self.topic = topic
        self.id = next(Publisher._ids)
        self.seq = 0
        self.live = True
        self._lock = threading.Lock()
        self._sock: Optional[socket.socket] = None

    def publish(self, payload) -> int:
        if self.bus.closed or not self.live:
            raise BusClosed(f"cannot publish on {self.topic.name}: bus closed")
        payload = bytes(payload)
        with self._lock:
            self.seq += 1
            sample = BusSample(self.topic.name, self.seq, payload, time.monotonic_ns())
            self.bus._dispatch(self, sample)
            return self.seq

    def close(self) -> None:
        self.live = False
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def state(self) -> dict:
        """Observable publisher fields (subscriber-independent by design)."""
        return {"topic": self.topic, "id": self.id, "seq": self.seq, "live": self.live}


class Subscriber:
    _ids = itertools.count(1)

    def __init__(self, bus: "Bus", topic: Topic, callback: Callable[[BusSample], None]):
        self.bus = bus
        self.topic = topic
        self.callback = callback
        self.id = next(Subscriber._ids)
        self.received = 0
        self.errors = 0
        self._lock = threading.Lock()
        self._sock: Optional[socket.socket] = None
        self._thread: Optional[threading.Thread] = None
        self._running = False
        self.reassembler = Reassembler()

    @property
    def dropped(self) -> int:
        return self.reassembler.dropped

    @property
    def address(self):
        return self._sock.getsockname() if self._sock else None

    def _deliver(self, sample: BusSample) -> None:
        with self._lock:
            self.received += 1
            try:
                self.callback(sample)
            except Exception:
                self.errors += 1
                log.exception("subscriber callback failed on %s", self.topic.name)

    def _start_udp(self, port: int, rcvbuf: int) -> None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        set_buffers(sock, rcvbuf)
        sock.bind(("127.0.0.1", port))
        sock.settimeout(0.05)
        self._sock = sock
        self._running = True
        self._thread = threading.Thread(target=self._read_loop, name=f"bus-sub-{self.id}",
                                        daemon=True)
        self._thread.start()

    def _read_loop(self) -> None:
        sock = self._sock
        while self._running:
            try:
                frame, addr = sock.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            done = self.reassembler.feed(frame, addr)
            if done is None:
                continue
            _, seq, body = done
            (stamp,) = _STAMP.unpack_from(body)
            self._deliver(BusSample(self.topic.name, seq, body[_STAMP.size:], stamp))

    def close(self) -> None:
        self.bus._remove(self)
        self._running = False
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout=1)
        if self._sock is not None:
            self._sock.close()
            self._sock = None


@dataclass
class _TopicEntry:
    topic: Topic
    subscribers: list = field(default_factory=list)


class Bus:
    """Topic registry plus delivery; safe to share between threads."""

    def __init__(self, transport: str = "inproc", *, fragment_size: int = DEFAULT_FRAGMENT,
                 port_range: Optional[tuple] = None, rcvbuf: int = 32 << 20):
        if transport not in ("inproc", "udp"):
            raise ValueError(f"unknown bus transport {transport!r}")
        self.transport = transport
        self.fragment_size = fragment_size
        self.port_range = port_range
        self.rcvbuf = rcvbuf
        self.closed = False
        self._topics: dict[str, _TopicEntry] = {}
        self._lock = threading.Lock()
        self._publishers: list = []

    def _entry(self, topic: Topic) -> _TopicEntry:
        if not topic.name:
            raise ValueError("topic name must be non-empty")
        entry = self._topics.get(topic.name)
        if entry is None:
            entry = self._topics[topic.name] = _TopicEntry(topic)
        elif entry.topic.type_name != topic.type_name:
            raise TypeMismatch(f"topic {topic.name!r} carries {entry.topic.type_name}, "
                               f"not {topic.type_name}")
        return entry

    def create_publisher(self, topic: Topic) -> Publisher:
        with self._lock:
            if self.closed:
                raise BusClosed("bus closed")
            self._entry(topic)
            pub = Publisher(self, topic)
            if self.transport == "udp":
                pub._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                try:
                    pub._sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, self.rcvbuf)
                except OSError:
                    pass
                pub._sock.bind(("127.0.0.1", 0))
            self._publishers.append(pub)
            return pub

    def create_subscriber(self, topic: Topic, callback: Callable[[BusSample], None]) -> Subscriber:
        with self._lock:
            if self.closed:
                raise BusClosed("bus closed")
            entry = self._entry(topic)
            sub = Subscriber(self, topic, callback)
            if self.transport == "udp":
                sub._start_udp(self._next_port(), self.rcvbuf)
            entry.subscribers = entry.subscribers + [sub]
            return sub

    def _next_port(self) -> int:
        if self.port_range is None:
            return 0
        lo, hi = self.port_range
        used = {s.address[1] for e in self._topics.values() for s in e.subscribers if s.address}
        for port in range(lo, hi + 1):
            if port not in used:
                return port
        raise OSError(f"no free port in {lo}-{hi}")

    def _remove(self, sub: Subscriber) -> None:
        with self._lock:
            entry = self._topics.get(sub.topic.name)
            if entry is not None and sub in entry.subscribers:
                entry.subscribers = [s for s in entry.subscribers if s is not sub]

    def subscribers(self, topic_name: str) -> list:
        entry = self._topics.get(topic_name)
        return list(entry.subscribers) if entry else []

    def _dispatch(self, pub: Publisher, sample: BusSample) -> None:
        entry = self._topics.get(pub.topic.name)
        subs = entry.subscribers if entry else []
        if not subs:
            return
        if self.transport == "inproc":
            for sub in subs:
                sub._deliver(sample)
            return
        body = _STAMP.pack(sample.timestamp_ns) + sample.payload
        frames = fragment(pub.topic.hash, sample.seq, body, self.fragment_size)
        for sub in subs:
            addr = sub.address
            if addr is None:
                continue
            for i, frame in enumerate(frames):
                _send_all(pub._sock, frame, addr)
                if i & 7 == 7:
                    time.sleep(0)  # let a same-process reader drain before its buffer fills

    def close(self) -> None:
        with self._lock:
            self.closed = True
            subs = [s for e in self._topics.values() for s in e.subscribers]
            pubs = list(self._publishers)
        for sub in subs:
            sub.close()
        for pub in pubs:
            pub.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _send_all(sock: socket.socket, frame: bytes, addr) -> None:
    try:
        sock.sendto(frame, addr)
    except BlockingIOError:
        time.sleep(0.0005)
        sock.sendto(frame, addr)
