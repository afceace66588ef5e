"""The bridge node: bus topics on one side, SOME/IP events on the other.

A route is one topic bridged to one event of one eventgroup.

``BusToSomeip`` (register_service / fire_data_event)
    Offers the service over SD, subscribes to the bus topic and turns each
    sample into a Notification sent to every SD subscriber.
``SomeipToBus`` (build_proxy / get_data_event)
    Finds the service, subscribes to the eventgroup and republishes every
    accepted Notification on the bus topic.

The conversion spans are bracketed by checkpoints 1/2 and 3/4 written to
an injected :class:`~someip_bridge.trace.TraceSink`, keyed by the SOME/IP
session id of the message.
"""

from __future__ import annotations

import logging
import random
from typing import Optional

from .bus import Bus, BusSample, Topic
from .config import BridgeRouteConfig
from .errors import BusClosed, CodecError, ConfigError, SchemaError, UnknownType
from .net import SD_MULTICAST, Endpoint
from .schema import BufferedConverter, Direction, SchemaRegistry, compile_converter
from .sd import EventKind, SdClient, SdEvent, SdServer, SdTiming
from .sd_host import SdHost
from .someip import (HEADER, HEADER_SIZE, LENGTH_OFFSET, PROTOCOL_VERSION, MessageType,
                     ReturnCode, SessionCounter, SomeIpMessage)
from .trace import TraceSink, clock_ns

log = logging.getLogger(__name__)

_NOTIFICATION = int(MessageType.NOTIFICATION)
_OK = int(ReturnCode.OK)


def resolve_schema(cfg: BridgeRouteConfig, registry: Optional[SchemaRegistry]):
    if cfg.schema is not None:
        return cfg.schema
    if registry is None or cfg.type_name not in registry:
        raise UnknownType(cfg.type_name)
    return registry.get(cfg.type_name)


class _Route:
    direction: Direction

    def __init__(self, bridge: "Bridge", cfg: BridgeRouteConfig):
        if cfg.direction is not self.direction:
            raise ConfigError(f"route {cfg.topic} has direction {cfg.direction.value}")
        self.bridge = bridge
        self.cfg = cfg
        self.name = f"{cfg.direction.value}:{cfg.topic}"
        self.schema = resolve_schema(cfg, bridge.registry)
        # one reusable output buffer per route; callbacks of a route never overlap
        self._convert = BufferedConverter(compile_converter(self.schema, self.direction))
        self.sink: Optional[TraceSink] = bridge.sink
        self._rid = self.sink.route_id(self.name) if self.sink is not None else 0
        self.data_endpoint: Optional[Endpoint] = None
        self.running = False
        self.converted = 0
        self.dropped = 0
        self.malformed = 0
        self.ignored = 0
        self.wrong_version = 0
        self.sent = 0
        self.faults: list = []
        self.log = logging.LoggerAdapter(log, {"route": self.name})

    @property
    def net(self):
        return self.bridge.net

    @property
    def host(self) -> SdHost:
        return self.bridge.host

    def fault(self, reason: str) -> None:
        self.faults.append((self.net.now(), reason))
        self.log.warning("route=%s fault=%s", self.name, reason)

    def metrics(self) -> dict:
        return {
            "direction": self.cfg.direction.value,
            "topic": self.cfg.topic,
            "service_id": f"0x{self.cfg.service_id:04x}",
            "instance_id": f"0x{self.cfg.instance_id:04x}",
            "converted": self.converted,
            "dropped": self.dropped,
            "malformed": self.malformed,
            "ignored": self.ignored,
            "wrong_version": self.wrong_version,
            "sent": self.sent,
            "forwarding": self.forwarding,
            "faults": len(self.faults),
        }

    @property
    def forwarding(self) -> bool:
        raise NotImplementedError


class BusToSomeipRoute(_Route):
    direction = Direction.BUS_TO_SOMEIP

    def __init__(self, bridge, cfg):
        super().__init__(bridge, cfg)
        self.server: Optional[SdServer] = None
        self.subscriber = None
        self._session = SessionCounter()

    @property
    def forwarding(self) -> bool:
        return self.running

    def register_service(self) -> None:
        """Bind the data socket, offer the service and subscribe to the topic."""
        cfg = self.cfg
        self.data_endpoint = self.net.bind(cfg.endpoint, self._on_datagram)
        self.server = SdServer(self.bridge.timing, self.bridge.rng)
        self.host.attach(self.server, self._on_sd_event)
        self.host.command(self.server, lambda now: self.server.offer_service(
            cfg.key, cfg.major_version, cfg.minor_version, self.data_endpoint, now,
            eventgroups=(cfg.eventgroup_id,)))
        self.subscriber = self.bridge.bus.create_subscriber(
            Topic(cfg.topic, cfg.type_name), self.fire_data_event)
        self.running = True
        self.log.info("route=%s offered service=0x%04x instance=0x%04x endpoint=%s",
                      self.name, cfg.service_id, cfg.instance_id, self.data_endpoint)

    start = register_service

    def _on_datagram(self, data: bytes, source: Endpoint) -> None:
        self.ignored += 1

    def _on_sd_event(self, ev: SdEvent) -> None:
        self.log.info("route=%s sd_event=%s endpoint=%s", self.name, ev.kind.value, ev.endpoint)

    def subscribers(self) -> list:
        with self.host.lock:
            return self.server.subscribers(self.cfg.key, self.cfg.eventgroup_id, self.net.now())

    def fire_data_event(self, sample: BusSample) -> int:
        """Convert one bus sample and notify every subscriber; returns packets sent."""
        if not self.running:
            return 0
        payload = sample.payload
        session = self._session.next()
        t1 = clock_ns()
        try:
            # converted payload lands behind 16 reserved bytes for the header
            data = self._convert(payload, 0, HEADER_SIZE)
        except (CodecError, SchemaError) as exc:
            self.malformed += 1
            self.log.debug("route=%s malformed sample seq=%d: %s", self.name, sample.seq, exc)
            return 0
        t2 = clock_ns()
        with data:
            self.converted += 1
            sink = self.sink
            if sink is not None:
                sink.mark(self._rid, 1, session, t1, len(payload))
                sink.mark(self._rid, 2, session, t2, len(data) - HEADER_SIZE)
            targets = self.subscribers()
            if not targets:
                self.dropped += 1
                return 0
            cfg = self.cfg
            HEADER.pack_into(data, 0, cfg.service_id, cfg.method_id, len(data) - LENGTH_OFFSET,
                             0, session, PROTOCOL_VERSION, cfg.major_version, _NOTIFICATION, _OK)
            for target in targets:
                try:
                    self.net.send(self.data_endpoint, target, data)
                except OSError as exc:
                    self.dropped += 1
                    self.log.debug("route=%s send to %s failed: %s", self.name, target, exc)
                    continue
                self.sent += 1
        return len(targets)

    def stop(self) -> None:
        if not self.running:
            return
        self.running = False
        if self.subscriber is not None:
            self.subscriber.close()
        self.host.command(self.server, lambda now: self.server.stop_offer(self.cfg.key, now))
        self.host.detach(self.server)
        self.net.unbind(self.data_endpoint)


class SomeipToBusRoute(_Route):
    direction = Direction.SOMEIP_TO_BUS

    def __init__(self, bridge, cfg, *, retry_interval: float = 2.0):
        super().__init__(bridge, cfg)
        self.client: Optional[SdClient] = None
        self.publisher = None
        self.retry_interval = retry_interval
        self.resolved = None
        self._retry_timer = None

    @property
    def forwarding(self) -> bool:
        client = self.client
        if not self.running or client is None or self.resolved is None:
            return False
        return client.is_subscribed(self.resolved, self.cfg.eventgroup_id)

    def build_proxy(self) -> None:
        """Create the bus publisher, bind the data socket and start discovery."""
        cfg = self.cfg
        self.publisher = self.bridge.bus.create_publisher(Topic(cfg.topic, cfg.type_name))
        self.data_endpoint = self.net.bind(cfg.endpoint, self._on_datagram)
        self.client = SdClient(self.bridge.timing, self.bridge.rng)
        self.host.attach(self.client, self._on_sd_event)
        self.running = True
        self._find()
        self.log.info("route=%s finding service=0x%04x instance=0x%04x endpoint=%s",
                      self.name, cfg.service_id, cfg.instance_id, self.data_endpoint)

    start = build_proxy

    def _find(self) -> None:
        self._retry_timer = None
        if not self.running:
            return
        self.host.command(self.client, lambda now: self.client.find_service(
            self.cfg.key, now, self.cfg.major_version))

    def _subscribe(self) -> None:
        self._retry_timer = None
        if not self.running:
            return
        if self.client.lookup(self.cfg.key, self.net.now()) is None:
            self._find()
            return
        self.host.command(self.client, lambda now: self.client.subscribe_eventgroup(
            self.resolved, self.cfg.eventgroup_id, self.data_endpoint, now))

    def _retry(self, fn) -> None:
        if self._retry_timer is None and self.running:
            self._retry_timer = self.net.call_later(self.retry_interval, fn)

    def _on_sd_event(self, ev: SdEvent) -> None:
        kind = ev.kind
        self.log.info("route=%s sd_event=%s key=%s", self.name, kind.value, ev.key)
        if kind is EventKind.SERVICE_AVAILABLE:
            self.resolved = ev.key
            if self.client.subscriptions.get((ev.key, self.cfg.eventgroup_id)) is None:
                self._subscribe()
        elif kind is EventKind.SERVICE_LOST:
            self.fault("service lost")
        elif kind is EventKind.FIND_TIMEOUT:
            self.fault("discovery timeout")
            self._retry(self._find)
        elif kind in (EventKind.SUBSCRIBE_TIMEOUT, EventKind.SUBSCRIBE_NACK):
            self.fault(kind.value)
            self._retry(self._subscribe)

    def _on_datagram(self, data: bytes, source: Endpoint) -> None:
        t3 = clock_ns()
        if len(data) < HEADER_SIZE:
            self.malformed += 1
            return
        (service, method, length, _client, session, proto, iface, mtype,
         _rc) = HEADER.unpack_from(data)
        if service != self.cfg.service_id or method != self.cfg.method_id:
            self.ignored += 1
            return
        if proto != PROTOCOL_VERSION or length != len(data) - LENGTH_OFFSET:
            self.malformed += 1
            return
        if mtype != _NOTIFICATION:
            self.ignored += 1
            return
        self._deliver(session, iface, data, HEADER_SIZE, t3)

    def get_data_event(self, msg: SomeIpMessage) -> bool:
        """Accept one Notification; returns True when it was published."""
        t3 = clock_ns()
        h = msg.header
        if h.service_id != self.cfg.service_id or h.method_id != self.cfg.method_id:
            self.ignored += 1
            return False
        if h.message_type != MessageType.NOTIFICATION:
            self.ignored += 1
            return False
        return self._deliver(h.session_id, h.interface_version, bytes(msg.payload), 0, t3)

    def _deliver(self, session: int, iface: int, data: bytes, start: int, t3: int) -> bool:
        if iface != self.cfg.major_version:
            self.dropped += 1
            self.wrong_version += 1
            return False
        if not self.forwarding:
            self.dropped += 1
            return False
        try:
            out = self._convert(data, start)
        except (CodecError, SchemaError) as exc:
            self.malformed += 1
            self.log.debug("route=%s malformed notification session=%d: %s",
                           self.name, session, exc)
            return False
        t4 = clock_ns()
        with out:
            self.converted += 1
            sink = self.sink
            if sink is not None:
                sink.mark(self._rid, 3, session, t3, len(data) - start)
                sink.mark(self._rid, 4, session, t4, len(out))
            try:
                self.publisher.publish(out)
            except BusClosed:
                self.dropped += 1
                return False
            self.sent += 1
        return True

    def stop(self) -> None:
        if not self.running:
            return
        self.running = False
        if self._retry_timer is not None:
            self._retry_timer.cancel()
        client = self.client

        def withdraw(now):
            out = []
            for (key, eg) in list(client.subscriptions):
                out.extend(client.unsubscribe_eventgroup(key, eg, now))
            out.extend(client.stop_find(self.cfg.key, now))
            return out
        self.host.command(client, withdraw)
        self.host.detach(client)
        self.net.unbind(self.data_endpoint)
        self.publisher.close()


ROUTE_TYPES = {
    Direction.BUS_TO_SOMEIP: BusToSomeipRoute,
    Direction.SOMEIP_TO_BUS: SomeipToBusRoute,
}


class Bridge:
    """A set of routes sharing one SD socket, one bus and one trace sink."""

    def __init__(self, net, bus: Bus, sd_endpoint: Endpoint, *, group: Endpoint = SD_MULTICAST,
                 registry: Optional[SchemaRegistry] = None, sink: Optional[TraceSink] = None,
                 timing: Optional[SdTiming] = None, rng: Optional[random.Random] = None,
                 join_group: bool = True):
        self.net = net
        self.bus = bus
        self.registry = registry
        self.sink = sink
        self.timing = timing or SdTiming()
        self.rng = rng or random.Random()
        self.sd_endpoint = sd_endpoint
        self.group = group
        self.join_group = join_group
        self.host: Optional[SdHost] = None
        self.routes: list = []

    def add_route(self, cfg: BridgeRouteConfig, **kwargs) -> _Route:
        """Validate and prepare a route; raises before any network activity."""
        route = ROUTE_TYPES[cfg.direction](self, cfg, **kwargs)
        self.routes.append(route)
        return route

    def start(self) -> None:
        self.net.run_sync(self._start)

    def _start(self) -> None:
        if self.host is None:
            self.host = SdHost(self.net, self.sd_endpoint, self.group,
                               join_group=self.join_group)
        for route in self.routes:
            if not route.running:
                route.start()

    def stop(self) -> None:
        if self.host is not None:
            self.net.run_sync(self._stop)

    def _stop(self) -> None:
        for route in self.routes:
            try:
                route.stop()
            except Exception:
                log.exception("route=%s stop failed", route.name)
        self.host.close()
        self.host = None

    def route(self, topic: str) -> _Route:
        for r in self.routes:
            if r.cfg.topic == topic:
                return r
        raise KeyError(topic)

    def metrics(self) -> dict:
        out = {r.name: r.metrics() for r in self.routes}
        if self.host is not None:
            out["sd"] = {"received": self.host.received, "malformed": self.host.malformed}
        return out

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()
