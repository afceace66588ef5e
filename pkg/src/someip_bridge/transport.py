"""Datagram networks the SD and bridge layers run on.

Two implementations share one small surface (``now``, ``bind``, ``join``,
``send``, ``call_at``, ``call_soon``):

* :class:`SimNetwork` -- a deterministic discrete-event network with a
  virtual clock; used by tests and the in-process bench transport.
* :class:`UdpNetwork` -- real UDP sockets driven by an asyncio loop on a
  background thread.  Handlers always run on that loop thread.

Datagrams larger than :data:`MAX_DATAGRAM` are split by :class:`Fragmenter`
into marked fragments and reassembled on receipt (a private framing, not
SOME/IP-TP).
"""

from __future__ import annotations

import asyncio
import heapq
import itertools
import logging
import socket
import struct
import threading
import time
from collections import defaultdict
from typing import Callable, Optional

from .errors import PortInUse
from .net import Endpoint, set_buffers

log = logging.getLogger(__name__)

Handler = Callable[[bytes, Endpoint], None]

MAX_DATAGRAM = 65000
FRAGMENT_CHUNK = 60000
# service 0xFFFF / method 0xFFFE: reserved ids no data or SD message uses
FRAGMENT_MAGIC = 0xFFFFFFFE
_FRAG = struct.Struct(">IIHHI")
FRAGMENT_HEADER_SIZE = _FRAG.size  # 16


def is_multicast(ep: Endpoint) -> bool:
    first = int(ep.address.split(".", 1)[0])
    return 224 <= first <= 239


class Fragmenter:
    """Split oversize datagrams and reassemble them per source."""

    def __init__(self, chunk: int = FRAGMENT_CHUNK):
        self.chunk = chunk
        self._ids = itertools.count(1)
        self._partial: dict = {}
        self.dropped = 0

    def split(self, data: bytes) -> list:
        if len(data) <= MAX_DATAGRAM:
            return [data]
        msg_id = next(self._ids) & 0xFFFFFFFF
        view = memoryview(data)
        count = -(-len(data) // self.chunk)
        return [_FRAG.pack(FRAGMENT_MAGIC, msg_id, i, count, len(data))
                + view[i * self.chunk:(i + 1) * self.chunk]
                for i in range(count)]

    def feed(self, data: bytes, source: Endpoint) -> Optional[bytes]:
        """Return a complete datagram, or None while fragments are pending."""
        if len(data) < FRAGMENT_HEADER_SIZE or int.from_bytes(data[:4], "big") != FRAGMENT_MAGIC:
            return data
        _, msg_id, index, count, total = _FRAG.unpack_from(data)
        state = self._partial.get(source)
        if state is None or state[0] != msg_id:
            if state is not None:
                self.dropped += 1
            state = self._partial[source] = [msg_id, count, total, {}]
        state[3][index] = data[FRAGMENT_HEADER_SIZE:]
        if len(state[3]) < count:
            return None
        del self._partial[source]
        whole = b"".join(state[3][i] for i in range(count))
        if len(whole) != total:
            self.dropped += 1
            return None
        return whole


class _Timer:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class SimNetwork:
    """Deterministic virtual-time datagram network.

    ``latency`` is applied to every delivery; ``drop`` is an optional
    predicate ``(src, dst, data) -> bool`` used to inject loss.  Every
    datagram put on the wire is appended to :attr:`sent` as
    ``(time, src, dst, data)``.
    """

    def __init__(self, latency: float = 0.0005, start: float = 0.0, drop=None):
        self.latency = latency
        self._now = start
        self._queue: list = []
        self._seq = itertools.count()
        self._bindings: dict[Endpoint, Handler] = {}
        self._groups: dict[Endpoint, set] = defaultdict(set)
        self.drop = drop
        self.sent: list = []
        self.undeliverable = 0
        self._ephemeral = itertools.cycle(range(49152, 65536))

    def now(self) -> float:
        return self._now

    def bind(self, endpoint: Endpoint, handler: Handler) -> Endpoint:
        if endpoint.port == 0:
            endpoint = Endpoint(endpoint.address, next(
                p for p in self._ephemeral if Endpoint(endpoint.address, p) not in self._bindings))
        if endpoint in self._bindings:
            raise PortInUse(f"{endpoint} already bound")
        self._bindings[endpoint] = handler
        return endpoint

    def unbind(self, endpoint: Endpoint) -> None:
        self._bindings.pop(endpoint, None)
        for members in self._groups.values():
            members.discard(endpoint)

    def join(self, group: Endpoint, local: Endpoint) -> None:
        self._groups[group].add(local)

    def send(self, src: Endpoint, dst: Endpoint, data: bytes) -> None:
        data = bytes(data)
        self.sent.append((self._now, src, dst, data))
        if self.drop is not None and self.drop(src, dst, data):
            return
        targets = sorted(self._groups.get(dst, ())) if is_multicast(dst) else [dst]
        for target in targets:
            self.call_at(self._now + self.latency, self._deliver, target, data, src)

    def _deliver(self, target: Endpoint, data: bytes, src: Endpoint) -> None:
        handler = self._bindings.get(target)
        if handler is None:
            self.undeliverable += 1
            return
        handler(data, src)

    def call_at(self, when: float, fn, *args) -> _Timer:
        timer = _Timer()
        heapq.heappush(self._queue, (max(when, self._now), next(self._seq), timer, fn, args))
        return timer

    def call_later(self, delay: float, fn, *args) -> _Timer:
        return self.call_at(self._now + delay, fn, *args)

    def call_soon(self, fn, *args) -> _Timer:
        return self.call_at(self._now, fn, *args)

    def run_sync(self, fn, *args, timeout: float = 5.0):
        return fn(*args)

    def step(self) -> bool:
        while self._queue:
            when, _, timer, fn, args = heapq.heappop(self._queue)
            if timer.cancelled:
                continue
            self._now = when
            fn(*args)
            return True
        return False

    def run_until(self, deadline: float) -> None:
        while self._queue and self._queue[0][0] <= deadline:
            self.step()
        self._now = max(self._now, deadline)

    def run_for(self, duration: float) -> None:
        self.run_until(self._now + duration)

    def run_until_true(self, predicate, timeout: float) -> bool:
        """Advance until ``predicate()`` holds or ``timeout`` virtual seconds pass."""
        deadline = self._now + timeout
        while not predicate():
            if not self._queue or self._queue[0][0] > deadline:
                self._now = max(self._now, deadline)
                return predicate()
            self.step()
        return True


class _Reader:
    """Drains one non-blocking socket from the loop thread."""

    def __init__(self, sock: socket.socket, handler: Handler):
        self.sock = sock
        self.handler = handler
        self.fragmenter = Fragmenter()

    def ready(self) -> None:
        while True:
            try:
                data, addr = self.sock.recvfrom(65536)
            except (BlockingIOError, InterruptedError):
                return
            except OSError as exc:
                log.debug("socket error: %s", exc)
                return
            source = Endpoint(addr[0], addr[1])
            whole = self.fragmenter.feed(data, source)
            if whole is None:
                continue
            try:
                self.handler(whole, source)
            except Exception:
                log.exception("datagram handler failed")


class UdpNetwork:
    """Real UDP sockets on an asyncio loop running in a daemon thread.

    ``group_peers`` turns a multicast group into a static unicast fan-out
    list (loopback-only mode, for hosts or CI without multicast).
    """

    def __init__(self, *, interface: str = "127.0.0.1", group_peers=None,
                 rcvbuf: int = 32 << 20):
        self.interface = interface
        self.group_peers = {Endpoint(*g): [Endpoint(*p) for p in peers]
                            for g, peers in (group_peers or {}).items()}
        self.rcvbuf = rcvbuf
        self._loop = asyncio.new_event_loop()
        self._sockets: dict[Endpoint, socket.socket] = {}
        self._readers: dict[Endpoint, _Reader] = {}
        self._fragmenter = Fragmenter()
        self._send_lock = threading.Lock()
        self._thread = threading.Thread(target=self._run, name="udp-net", daemon=True)
        self._thread.start()

    def _run(self):
        asyncio.set_event_loop(self._loop)
        self._loop.run_forever()

    def close(self) -> None:
        if self._loop.is_closed():
            return

        def _shutdown():
            for key in list(self._readers):
                self._drop(key)
            self._loop.stop()
        self._loop.call_soon_threadsafe(_shutdown)
        self._thread.join(timeout=5)
        self._loop.close()
        self._sockets.clear()
        self._readers.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def on_loop_thread(self) -> bool:
        return threading.current_thread() is self._thread

    def now(self) -> float:
        return time.monotonic()

    def _make_socket(self, endpoint: Endpoint, reuse: bool = False) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        if reuse:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            if hasattr(socket, "SO_REUSEPORT"):
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
        set_buffers(sock, self.rcvbuf)
        try:
            sock.bind(tuple(endpoint))
        except OSError as exc:
            sock.close()
            raise PortInUse(f"cannot bind {endpoint}: {exc}") from None
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_IF,
                        socket.inet_aton(self.interface))
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
        sock.setblocking(False)
        return sock

    def _attach(self, key: Endpoint, sock: socket.socket, handler: Handler) -> None:
        # the kernel queues datagrams until the reader is registered
        reader = _Reader(sock, handler)
        self._readers[key] = reader
        self._on_loop(self._loop.add_reader, sock.fileno(), reader.ready)

    def _on_loop(self, fn, *args) -> None:
        if self.on_loop_thread:
            fn(*args)
        else:
            self._loop.call_soon_threadsafe(fn, *args)

    def _drop(self, key: Endpoint) -> None:
        reader = self._readers.pop(key, None)
        self._sockets.pop(key, None)
        if reader is not None:
            self._loop.remove_reader(reader.sock.fileno())
            reader.sock.close()

    def bind(self, endpoint: Endpoint, handler: Handler) -> Endpoint:
        sock = self._make_socket(endpoint)
        actual = Endpoint(*sock.getsockname())
        self._sockets[actual] = sock
        self._attach(actual, sock, handler)
        return actual

    def unbind(self, endpoint: Endpoint) -> None:
        if endpoint in self._readers and not self._loop.is_closed():
            self._on_loop(self._drop, endpoint)

    def join(self, group: Endpoint, local: Endpoint) -> None:
        """Deliver traffic for ``group`` to the handler bound at ``local``."""
        if group in self.group_peers:
            return
        sock = self._make_socket(group, reuse=True)
        mreq = struct.pack("4s4s", socket.inet_aton(group.address),
                           socket.inet_aton(self.interface))
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        handler = self._readers[local].handler
        key = Endpoint(f"group:{group.address}", group.port * 100000 + local.port)
        self._sockets[key] = sock
        self._attach(key, sock, handler)

    def send(self, src: Endpoint, dst: Endpoint, data: bytes) -> None:
        sock = self._sockets.get(src)
        if sock is None:
            raise OSError(f"no socket bound at {src}")
        targets = self.group_peers.get(dst, [dst])
        with self._send_lock:
            frames = self._fragmenter.split(data)
        for target in targets:
            if target == src:
                continue
            for frame in frames:
                self._sendto(sock, frame, target)
                if len(frames) > 1:
                    time.sleep(0)  # pace bursts so a same-process reader keeps up

    @staticmethod
    def _sendto(sock, frame, target) -> None:
        for _ in range(1000):
            try:
                sock.sendto(frame, tuple(target))
                return
            except BlockingIOError:
                time.sleep(0.0001)
            except OSError as exc:
                log.debug("sendto %s failed: %s", target, exc)
                return

    def call_at(self, when: float, fn, *args):
        if self.on_loop_thread:
            return self._loop.call_at(when, fn, *args)
        holder = {}
        ready = threading.Event()

        def arm():
            holder["h"] = self._loop.call_at(when, fn, *args)
            ready.set()
        self._loop.call_soon_threadsafe(arm)
        ready.wait(5)
        return holder["h"]

    def call_later(self, delay: float, fn, *args):
        return self.call_at(self.now() + delay, fn, *args)

    def call_soon(self, fn, *args):
        return self._loop.call_soon_threadsafe(fn, *args)

    def run_sync(self, fn, *args, timeout: float = 5.0):
        """Run ``fn`` on the loop thread and wait for its result."""
        if self.on_loop_thread:
            return fn(*args)
        fut = asyncio.run_coroutine_threadsafe(self._as_coro(fn, *args), self._loop)
        return fut.result(timeout)

    @staticmethod
    async def _as_coro(fn, *args):
        return fn(*args)
