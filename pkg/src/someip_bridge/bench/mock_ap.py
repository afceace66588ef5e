"""A stand-in for the application on the SOME/IP side of a route.

The peer speaks only the SOME/IP message format and SD: payloads are
built with :func:`encode_someip` and checked with :func:`decode_someip`
from values, never with the bridge's byte-level converters, so a bug in
the converters cannot hide itself.

* ``SENDER`` offers the route's service and sends Notifications to every
  subscriber (pairs with a bridge ``someip_to_bus`` route).
* ``RECEIVER`` finds the service, subscribes to the eventgroup and
  validates each Notification (pairs with a bridge ``bus_to_someip`` route).

Both roles log a sha256 digest per payload so two sides can be compared.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import random
import time
from typing import Callable, Optional

from ..config import BridgeRouteConfig
from ..errors import CodecError, DiscoveryTimeout, SchemaError
from ..net import SD_MULTICAST, Endpoint
from ..schema import MessageSchema, SchemaRegistry, decode_someip, encode_someip
from ..schema.model import INT_RANGES
from ..sd import EventKind, SdClient, SdEvent, SdServer, SdTiming
from ..sd_host import SdHost
from ..someip import MessageType, SessionCounter, SomeIpMessage, decode_message, encode_message
from ..transport import SimNetwork

log = logging.getLogger(__name__)


class PeerRole(enum.Enum):
    SENDER = "sender"
    RECEIVER = "receiver"


def digest(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def synthetic_value(schema: MessageSchema, rng: random.Random, items: int = 2) -> dict:
    """A schema-conforming value with random content and short arrays."""
    value = {}
    for f in schema.fields:
        if f.is_bytes:
            value[f.name] = rng.randbytes(f.count if f.count is not None else 8 * items)
        elif f.is_array:
            n = f.count if f.count is not None else items
            value[f.name] = [_element(f, rng, items) for _ in range(n)]
        else:
            value[f.name] = _element(f, rng, items)
    return value


def _element(f, rng, items):
    if f.schema is not None:
        return synthetic_value(f.schema, rng, items)
    if f.is_string:
        return f"s{rng.randrange(1000)}"
    if f.type_name == "bool":
        return rng.random() < 0.5
    if f.type_name in ("float32", "float64"):
        return float(rng.randrange(-1000, 1000)) / 4
    lo, hi = INT_RANGES[f.type_name]
    return rng.randint(lo, hi)


class MockApPeer:
    def __init__(self, role: PeerRole, cfg: BridgeRouteConfig, net, sd_endpoint: Endpoint, *,
                 group: Endpoint = SD_MULTICAST, registry: Optional[SchemaRegistry] = None,
                 timing: Optional[SdTiming] = None, rng: Optional[random.Random] = None,
                 data_endpoint: Optional[Endpoint] = None,
                 on_payload: Optional[Callable[[bytes, dict], None]] = None):
        self.role = PeerRole(role)
        self.cfg = cfg
        self.net = net
        self.sd_endpoint = sd_endpoint
        self.group = group
        self.timing = timing or SdTiming()
        self.rng = rng or random.Random()
        if cfg.schema is not None:
            self.schema = cfg.schema
        else:
            self.schema = (registry or SchemaRegistry.bundled()).get(cfg.type_name)
        # the bridge's configured endpoint belongs to the bridge; the peer binds its own
        self.requested_endpoint = data_endpoint or Endpoint(cfg.address, 0)
        self.on_payload = on_payload
        self.host: Optional[SdHost] = None
        self.machine = None
        self.data_endpoint: Optional[Endpoint] = None
        self.resolved = None
        self.running = False
        self.sent = 0
        self.received = 0
        self.invalid = 0
        self.digests: list = []
        self.values: list = []
        self.events: list = []
        self._session = SessionCounter()

    # lifecycle

    def start(self) -> None:
        self.net.run_sync(self._start)

    def _start(self) -> None:
        cfg = self.cfg
        self.host = SdHost(self.net, self.sd_endpoint, self.group)
        self.data_endpoint = self.net.bind(self.requested_endpoint, self._on_datagram)
        self.running = True
        if self.role is PeerRole.SENDER:
            self.machine = SdServer(self.timing, self.rng)
            self.host.attach(self.machine, self._on_sd_event)
            self.host.command(self.machine, lambda now: self.machine.offer_service(
                cfg.key, cfg.major_version, cfg.minor_version, self.data_endpoint, now,
                eventgroups=(cfg.eventgroup_id,)))
        else:
            self.machine = SdClient(self.timing, self.rng)
            self.host.attach(self.machine, self._on_sd_event)
            self.host.command(self.machine, lambda now: self.machine.find_service(
                cfg.key, now, cfg.major_version))
        log.info("peer=%s service=0x%04x instance=0x%04x data=%s", self.role.value,
                 cfg.service_id, cfg.instance_id, self.data_endpoint)

    def stop(self) -> None:
        """Orderly shutdown: withdraw the offer or the subscription first."""
        if self.running:
            self.net.run_sync(self._stop, True)

    def kill(self) -> None:
        """Vanish without a word, like a crashed process."""
        if self.running:
            self.net.run_sync(self._stop, False)

    def _stop(self, graceful: bool) -> None:
        self.running = False
        machine = self.machine
        if graceful:
            if self.role is PeerRole.SENDER:
                self.host.command(machine, lambda now: machine.stop_all(now))
            else:
                def withdraw(now):
                    out = []
                    for key, eg in list(machine.subscriptions):
                        out.extend(machine.unsubscribe_eventgroup(key, eg, now))
                    out.extend(machine.stop_find(self.cfg.key, now))
                    return out
                self.host.command(machine, withdraw)
        self.host.detach(machine)
        self.host.close()
        self.net.unbind(self.data_endpoint)

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    # discovery

    def _on_sd_event(self, ev: SdEvent) -> None:
        self.events.append((self.net.now(), ev.kind))
        log.info("peer=%s sd_event=%s key=%s", self.role.value, ev.kind.value, ev.key)
        if self.role is PeerRole.RECEIVER and ev.kind is EventKind.SERVICE_AVAILABLE:
            self.resolved = ev.key
            if (ev.key, self.cfg.eventgroup_id) not in self.machine.subscriptions:
                self.host.command(self.machine, lambda now: self.machine.subscribe_eventgroup(
                    ev.key, self.cfg.eventgroup_id, self.data_endpoint, now))

    def subscribers(self) -> list:
        if self.role is not PeerRole.SENDER or self.host is None:
            return []
        with self.host.lock:
            return self.machine.subscribers(self.cfg.key, self.cfg.eventgroup_id, self.net.now())

    @property
    def ready(self) -> bool:
        if not self.running:
            return False
        if self.role is PeerRole.SENDER:
            return bool(self.subscribers())
        return self.resolved is not None and self.machine.is_subscribed(
            self.resolved, self.cfg.eventgroup_id)

    def wait_ready(self, timeout: float) -> None:
        """Block (or advance virtual time) until discovery completes."""
        if isinstance(self.net, SimNetwork):
            ok = self.net.run_until_true(lambda: self.ready, timeout)
        else:
            deadline = time.monotonic() + timeout
            while not self.ready and time.monotonic() < deadline:
                time.sleep(0.01)
            ok = self.ready
        if not ok:
            what = "a subscriber" if self.role is PeerRole.SENDER else "a subscription"
            raise DiscoveryTimeout(
                f"no {what} for service 0x{self.cfg.service_id:04x} "
                f"instance 0x{self.cfg.instance_id:04x} within {timeout:g}s")

    # data

    def send_value(self, value: dict) -> int:
        """Encode one value and notify every current subscriber."""
        payload = encode_someip(self.schema, value)
        return self.send_payload(payload)

    def send_payload(self, payload: bytes) -> int:
        if self.role is not PeerRole.SENDER:
            raise ValueError("only a sender sends notifications")
        cfg = self.cfg
        msg = SomeIpMessage.build(cfg.service_id, cfg.method_id, payload,
                                  session_id=self._session.next(),
                                  interface_version=cfg.major_version)
        data = encode_message(msg)
        targets = self.subscribers()
        for target in targets:
            self.net.send(self.data_endpoint, target, data)
        self.sent += 1
        self.digests.append(digest(payload))
        log.debug("peer=sender session=%d digest=%s targets=%d", msg.header.session_id,
                  self.digests[-1], len(targets))
        return len(targets)

    def _on_datagram(self, data: bytes, source: Endpoint) -> None:
        if self.role is not PeerRole.RECEIVER:
            return
        cfg = self.cfg
        try:
            msg, rest = decode_message(data)
            h = msg.header
            if rest or h.service_id != cfg.service_id or h.method_id != cfg.method_id \
                    or h.message_type != MessageType.NOTIFICATION:
                raise CodecError("unexpected message")
            value = decode_someip(self.schema, msg.payload)
        except (CodecError, SchemaError) as exc:
            self.invalid += 1
            log.warning("peer=receiver invalid notification from %s: %s", source, exc)
            return
        self.received += 1
        self.digests.append(digest(msg.payload))
        self.values.append(value)
        log.debug("peer=receiver session=%d digest=%s", h.session_id, self.digests[-1])
        if self.on_payload is not None:
            self.on_payload(msg.payload, value)


def run_mock_ap(role: PeerRole, cfg: BridgeRouteConfig, net, sd_endpoint: Endpoint, *,
                count: int = 10, rate: float = 10.0, timeout: float = 10.0,
                group: Endpoint = SD_MULTICAST, registry: Optional[SchemaRegistry] = None,
                seed: int = 0, should_stop: Callable[[], bool] = lambda: False) -> MockApPeer:
    """Discover, then send (or wait for) ``count`` notifications.

    Raises :class:`DiscoveryTimeout` when the other side never shows up.
    """
    peer = MockApPeer(role, cfg, net, sd_endpoint, group=group, registry=registry,
                      rng=random.Random(seed))
    peer.start()
    try:
        peer.wait_ready(timeout)
        if peer.role is PeerRole.SENDER:
            values = random.Random(seed)
            for _ in range(count):
                if should_stop():
                    break
                peer.net.run_sync(peer.send_value, synthetic_value(peer.schema, values))
                time.sleep(1.0 / rate if rate > 0 else 0)
        else:
            deadline = time.monotonic() + timeout + count / max(rate, 1e-9)
            while peer.received < count and not should_stop() and time.monotonic() < deadline:
                time.sleep(0.01)
    finally:
        peer.stop()
    return peer
