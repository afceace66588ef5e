"""SOME/IP service discovery state machines.

Both roles are passive objects: every input (user command, received SD
message, clock tick) is a method call that takes ``now`` in seconds and
returns a list of outputs, each either a :class:`Send` (an SD message to
put on the wire) or an :class:`SdEvent` (a notification for the owner).
Timers are kept internally; owners call :meth:`poll` at or after
:meth:`next_deadline`.  Nothing here touches a socket or a real clock.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import AlreadyOffered, NotDiscovered, WrongRole
from .net import Endpoint
from .sd_wire import (ANY_MAJOR, ANY_MINOR, EntryType, SdEntry, SdMessage,
                      ServiceKey)
from .someip import SessionCounter

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SdTiming:
    initial_delay_min: float = 0.010
    initial_delay_max: float = 0.100
    repetition_base: float = 0.200
    repetition_max: int = 3
    cyclic_offer: float = 1.0
    offer_ttl: int = 3
    find_retries: int = 3
    find_interval: float = 0.500
    subscribe_ttl: int = 3
    ack_timeout: float = 0.500
    subscribe_attempts: int = 3


class Role(enum.Enum):
    SERVER = "server"
    CLIENT = "client"


class ServerPhase(enum.Enum):
    DOWN = "down"
    INITIAL = "initial"
    REPETITION = "repetition"
    MAIN = "main"


class ClientPhase(enum.Enum):
    DOWN = "down"
    SEARCHING = "searching"
    SERVICE_KNOWN = "service_known"
    SUBSCRIBED = "subscribed"


class EventKind(enum.Enum):
    SERVICE_AVAILABLE = "service_available"
    SERVICE_LOST = "service_lost"
    FIND_TIMEOUT = "find_timeout"
    SUBSCRIBED = "subscribed"
    SUBSCRIBE_NACK = "subscribe_nack"
    SUBSCRIBE_TIMEOUT = "subscribe_timeout"
    SUBSCRIBER_ADDED = "subscriber_added"
    SUBSCRIBER_REMOVED = "subscriber_removed"


@dataclass(frozen=True)
class Send:
    """An SD message to transmit; ``dest`` None means the multicast group."""
    dest: Optional[Endpoint]
    message: SdMessage


@dataclass(frozen=True)
class SdEvent:
    kind: EventKind
    key: ServiceKey
    eventgroup_id: Optional[int] = None
    endpoint: Optional[Endpoint] = None


@dataclass
class KnownOffer:
    sd_source: Endpoint
    endpoint: Endpoint
    major_version: int
    minor_version: int
    expires: float


def _version_ok(wanted: int, offered: int, wildcard: int) -> bool:
    return wanted == wildcard or wanted == offered


class _Endpoint:
    role: Role

    def __init__(self, timing: Optional[SdTiming] = None, rng: Optional[random.Random] = None):
        self.timing = timing or SdTiming()
        self.rng = rng or random.Random()
        self._timers: list = []
        self._seq = itertools.count()
        self._session = SessionCounter()
        self._reboot = True
        self.malformed = 0

    # -- timers --------------------------------------------------------
    def _schedule(self, at: float, fn: Callable[[float], list]) -> None:
        heapq.heappush(self._timers, (at, next(self._seq), fn))

    def _expiry_deadlines(self) -> list:
        return []

    def next_deadline(self) -> Optional[float]:
        candidates = self._expiry_deadlines()
        if self._timers:
            candidates.append(self._timers[0][0])
        return min(candidates) if candidates else None

    def poll(self, now: float) -> list:
        out = []
        while self._timers and self._timers[0][0] <= now:
            at, _, fn = heapq.heappop(self._timers)
            out.extend(fn(at))
        out.extend(self._expire(now))
        return out

    def _expire(self, now: float) -> list:
        return []

    # -- outgoing ------------------------------------------------------
    def _send(self, dest: Optional[Endpoint], *entries: SdEntry) -> Send:
        session = self._session.next()
        msg = SdMessage(tuple(entries), self._reboot, session)
        if session == 0xFFFF:
            self._reboot = False
        return Send(dest, msg)

    # -- incoming ------------------------------------------------------
    def handle(self, msg: SdMessage, source: Endpoint, now: float) -> list:
        """Process one received SD message; unusable entries are counted."""
        self.malformed += msg.skipped
        out = []
        for entry in msg.entries:
            handler = self._handlers().get(entry.entry_type)
            if handler is not None:
                out.extend(handler(entry, source, now))
        return out

    def _handlers(self) -> dict:
        return {}


@dataclass
class _Offer:
    key: ServiceKey
    major: int
    minor: int
    endpoint: Endpoint
    eventgroups: frozenset
    phase: ServerPhase = ServerPhase.INITIAL
    generation: int = 0


class SdServer(_Endpoint):
    """Offering side: announces services and tracks eventgroup subscribers."""

    role = Role.SERVER

    def __init__(self, timing=None, rng=None):
        super().__init__(timing, rng)
        self.offers: dict[ServiceKey, _Offer] = {}
        # (key, eventgroup) -> {subscriber endpoint: expiry}
        self.subscriptions: dict[tuple, dict[Endpoint, float]] = {}
        self._generations = itertools.count(1)

    def phase(self, key: ServiceKey) -> ServerPhase:
        offer = self.offers.get(key)
        return offer.phase if offer else ServerPhase.DOWN

    def _offer_entry(self, offer: _Offer, ttl: Optional[int] = None) -> SdEntry:
        return SdEntry(EntryType.OFFER_SERVICE, offer.key, offer.major,
                       self.timing.offer_ttl if ttl is None else ttl,
                       minor_version=offer.minor, endpoint=offer.endpoint)

    def offer_service(self, key: ServiceKey, major: int, minor: int, endpoint: Endpoint,
                      now: float, eventgroups=()) -> list:
        if key in self.offers:
            raise AlreadyOffered(f"service {key} already offered")
        if key.instance_id == 0xFFFF:
            raise ValueError("instance 0xFFFF is reserved for finds")
        offer = _Offer(key, major, minor, endpoint, frozenset(eventgroups),
                       generation=next(self._generations))
        self.offers[key] = offer
        t = self.timing
        delay = self.rng.uniform(t.initial_delay_min, t.initial_delay_max)
        self._schedule(now + delay, self._timer(offer, self._initial_offer))
        log.debug("offer %s scheduled in %.3fs", key, delay)
        return []

    def _timer(self, offer: _Offer, fn):
        generation = offer.generation

        def fire(at):
            current = self.offers.get(offer.key)
            if current is None or current.generation != generation:
                return []
            return fn(current, at)
        return fire

    def _initial_offer(self, offer: _Offer, at: float) -> list:
        t = self.timing
        if t.repetition_max > 0:
            offer.phase = ServerPhase.REPETITION
            self._schedule(at + t.repetition_base, self._timer(offer, self._repeat_offer(1)))
        else:
            offer.phase = ServerPhase.MAIN
            self._schedule(at + t.cyclic_offer, self._timer(offer, self._cyclic_offer))
        return [self._send(None, self._offer_entry(offer))]

    def _repeat_offer(self, n: int):
        def fire(offer: _Offer, at: float) -> list:
            t = self.timing
            if n < t.repetition_max:
                self._schedule(at + t.repetition_base * 2 ** n,
                               self._timer(offer, self._repeat_offer(n + 1)))
            else:
                offer.phase = ServerPhase.MAIN
                self._schedule(at + t.cyclic_offer, self._timer(offer, self._cyclic_offer))
            return [self._send(None, self._offer_entry(offer))]
        return fire

    def _cyclic_offer(self, offer: _Offer, at: float) -> list:
        self._schedule(at + self.timing.cyclic_offer, self._timer(offer, self._cyclic_offer))
        return [self._send(None, self._offer_entry(offer))]

    def stop_offer(self, key: ServiceKey, now: float) -> list:
        offer = self.offers.pop(key, None)
        if offer is None:
            return []
        out = []
        for (skey, eg) in [k for k in self.subscriptions if k[0] == key]:
            for ep in self.subscriptions.pop((skey, eg)):
                out.append(SdEvent(EventKind.SUBSCRIBER_REMOVED, key, eg, ep))
        if offer.phase is ServerPhase.INITIAL:
            # nothing was announced yet
            return out
        return [self._send(None, self._offer_entry(offer, ttl=0))] + out

    def stop_all(self, now: float) -> list:
        out = []
        for key in list(self.offers):
            out.extend(self.stop_offer(key, now))
        return out

    def subscribers(self, key: ServiceKey, eventgroup_id: int, now: float) -> list:
        subs = self.subscriptions.get((key, eventgroup_id), {})
        return [ep for ep, expires in subs.items() if expires > now]

    def _handlers(self):
        return {
            EntryType.FIND_SERVICE: self._on_find,
            EntryType.SUBSCRIBE_EVENTGROUP: self._on_subscribe,
        }

    def _on_find(self, entry: SdEntry, source: Endpoint, now: float) -> list:
        out = []
        for offer in self.offers.values():
            if offer.phase not in (ServerPhase.REPETITION, ServerPhase.MAIN):
                continue
            if not entry.key.matches(offer.key):
                continue
            if not _version_ok(entry.major_version, offer.major, ANY_MAJOR):
                continue
            if not _version_ok(entry.minor_version, offer.minor, ANY_MINOR):
                continue
            out.append(self._send(source, self._offer_entry(offer)))
        return out

    def _on_subscribe(self, entry: SdEntry, source: Endpoint, now: float) -> list:
        offer = self.offers.get(entry.key)
        slot = (entry.key, entry.eventgroup_id)
        if entry.ttl == 0:
            subs = self.subscriptions.get(slot, {})
            if entry.endpoint in subs:
                del subs[entry.endpoint]
                return [SdEvent(EventKind.SUBSCRIBER_REMOVED, entry.key,
                                entry.eventgroup_id, entry.endpoint)]
            return []
        accepted = (offer is not None
                    and offer.phase is not ServerPhase.INITIAL
                    and entry.major_version == offer.major
                    and (not offer.eventgroups or entry.eventgroup_id in offer.eventgroups))
        ack_ttl = entry.ttl if accepted else 0
        ack = SdEntry(EntryType.SUBSCRIBE_EVENTGROUP_ACK, entry.key, entry.major_version,
                      ack_ttl, eventgroup_id=entry.eventgroup_id)
        out = [self._send(source, ack)]
        if accepted:
            subs = self.subscriptions.setdefault(slot, {})
            is_new = entry.endpoint not in subs or subs[entry.endpoint] <= now
            subs[entry.endpoint] = now + entry.ttl
            if is_new:
                out.append(SdEvent(EventKind.SUBSCRIBER_ADDED, entry.key,
                                   entry.eventgroup_id, entry.endpoint))
        return out

    def _expiry_deadlines(self) -> list:
        return [exp for subs in self.subscriptions.values() for exp in subs.values()]

    def _expire(self, now: float) -> list:
        out = []
        for (key, eg), subs in self.subscriptions.items():
            for ep in [ep for ep, exp in subs.items() if exp <= now]:
                del subs[ep]
                out.append(SdEvent(EventKind.SUBSCRIBER_REMOVED, key, eg, ep))
        return out


@dataclass
class _Wanted:
    key: ServiceKey
    major: int
    phase: ClientPhase = ClientPhase.SEARCHING
    resolved: Optional[ServiceKey] = None
    generation: int = 0


@dataclass
class _Subscription:
    key: ServiceKey
    eventgroup_id: int
    endpoint: Endpoint
    target: Endpoint
    major: int
    acked: bool = False
    attempts: int = 0
    generation: int = 0
    renewals: int = field(default=0)


class SdClient(_Endpoint):
    """Consuming side: finds services and subscribes to eventgroups."""

    role = Role.CLIENT

    def __init__(self, timing=None, rng=None):
        super().__init__(timing, rng)
        self.known_offers: dict[ServiceKey, KnownOffer] = {}
        self.wanted: dict[ServiceKey, _Wanted] = {}
        self.subscriptions: dict[tuple, _Subscription] = {}
        self._generations = itertools.count(1)

    # -- lookups -------------------------------------------------------
    def lookup(self, key: ServiceKey, now: float) -> Optional[tuple]:
        """Return ``(concrete_key, KnownOffer)`` for an unexpired match."""
        for offer_key, offer in self.known_offers.items():
            if offer.expires > now and key.matches(offer_key):
                return offer_key, offer
        return None

    def phase(self, key: ServiceKey) -> ClientPhase:
        wanted = self.wanted.get(key)
        if wanted is None:
            for w in self.wanted.values():
                if w.resolved == key:
                    return w.phase
            return ClientPhase.DOWN
        return wanted.phase

    def is_subscribed(self, key: ServiceKey, eventgroup_id: int) -> bool:
        sub = self.subscriptions.get((key, eventgroup_id))
        return sub is not None and sub.acked

    def _refresh_phase(self, key: ServiceKey) -> None:
        for w in self.wanted.values():
            if w.resolved != key:
                continue
            if any(s.acked for (k, _), s in self.subscriptions.items() if k == key):
                w.phase = ClientPhase.SUBSCRIBED
            elif w.phase is ClientPhase.SUBSCRIBED:
                w.phase = ClientPhase.SERVICE_KNOWN

    # -- find ----------------------------------------------------------
    def find_service(self, key: ServiceKey, now: float, major: int = ANY_MAJOR) -> list:
        wanted = self.wanted.get(key)
        if wanted is None:
            wanted = self.wanted[key] = _Wanted(key, major)
        wanted.generation = next(self._generations)
        hit = self.lookup(key, now)
        if hit is not None and _version_ok(major, hit[1].major_version, ANY_MAJOR):
            wanted.resolved = hit[0]
            if wanted.phase is not ClientPhase.SUBSCRIBED:
                wanted.phase = ClientPhase.SERVICE_KNOWN
            return [SdEvent(EventKind.SERVICE_AVAILABLE, hit[0], endpoint=hit[1].endpoint)]
        wanted.phase = ClientPhase.SEARCHING
        wanted.resolved = None
        self._schedule(now + self.timing.find_interval, self._find_retry(wanted, 1))
        return [self._send(None, self._find_entry(wanted))]

    def _find_entry(self, wanted: _Wanted) -> SdEntry:
        return SdEntry(EntryType.FIND_SERVICE, wanted.key, wanted.major,
                       self.timing.offer_ttl, minor_version=ANY_MINOR)

    def _find_retry(self, wanted: _Wanted, n: int):
        generation = wanted.generation

        def fire(at):
            if (self.wanted.get(wanted.key) is not wanted or wanted.generation != generation
                    or wanted.phase is not ClientPhase.SEARCHING):
                return []
            if n > self.timing.find_retries:
                wanted.phase = ClientPhase.DOWN
                return [SdEvent(EventKind.FIND_TIMEOUT, wanted.key)]
            self._schedule(at + self.timing.find_interval, self._find_retry(wanted, n + 1))
            return [self._send(None, self._find_entry(wanted))]
        return fire

    def stop_find(self, key: ServiceKey, now: float) -> list:
        wanted = self.wanted.pop(key, None)
        if wanted is None:
            return []
        out = []
        if wanted.resolved is not None:
            for (k, eg) in [s for s in self.subscriptions if s[0] == wanted.resolved]:
                out.extend(self.unsubscribe_eventgroup(k, eg, now))
        return out

    # -- subscribe -----------------------------------------------------
    def subscribe_eventgroup(self, key: ServiceKey, eventgroup_id: int, endpoint: Endpoint,
                             now: float) -> list:
        hit = self.lookup(key, now)
        if hit is None:
            raise NotDiscovered(f"no unexpired offer for {key}")
        concrete, offer = hit
        slot = (concrete, eventgroup_id)
        sub = _Subscription(concrete, eventgroup_id, endpoint, offer.sd_source,
                            offer.major_version, generation=next(self._generations))
        self.subscriptions[slot] = sub
        return self._send_subscribe(sub, now)

    def _subscribe_entry(self, sub: _Subscription, ttl: int) -> SdEntry:
        return SdEntry(EntryType.SUBSCRIBE_EVENTGROUP, sub.key, sub.major, ttl,
                       eventgroup_id=sub.eventgroup_id, endpoint=sub.endpoint)

    def _send_subscribe(self, sub: _Subscription, now: float) -> list:
        sub.attempts += 1
        self._schedule(now + self.timing.ack_timeout, self._ack_timeout(sub, sub.attempts))
        return [self._send(sub.target, self._subscribe_entry(sub, self.timing.subscribe_ttl))]

    def _current(self, sub: _Subscription, generation: int) -> bool:
        slot = (sub.key, sub.eventgroup_id)
        return self.subscriptions.get(slot) is sub and sub.generation == generation

    def _ack_timeout(self, sub: _Subscription, attempt: int):
        generation = sub.generation

        def fire(at):
            if not self._current(sub, generation) or sub.attempts != attempt:
                return []
            if sub.attempts < self.timing.subscribe_attempts:
                return self._send_subscribe(sub, at)
            del self.subscriptions[(sub.key, sub.eventgroup_id)]
            self._refresh_phase(sub.key)
            return [SdEvent(EventKind.SUBSCRIBE_TIMEOUT, sub.key, sub.eventgroup_id)]
        return fire

    def _renew(self, sub: _Subscription):
        generation = sub.generation

        def fire(at):
            if not self._current(sub, generation):
                return []
            sub.attempts = 0
            sub.renewals += 1
            return self._send_subscribe(sub, at)
        return fire

    def unsubscribe_eventgroup(self, key: ServiceKey, eventgroup_id: int, now: float) -> list:
        sub = self.subscriptions.pop((key, eventgroup_id), None)
        if sub is None:
            return []
        self._refresh_phase(key)
        return [self._send(sub.target, self._subscribe_entry(sub, 0))]

    # -- incoming ------------------------------------------------------
    def _handlers(self):
        return {
            EntryType.OFFER_SERVICE: self._on_offer,
            EntryType.SUBSCRIBE_EVENTGROUP_ACK: self._on_ack,
        }

    def _on_offer(self, entry: SdEntry, source: Endpoint, now: float) -> list:
        if entry.ttl == 0:
            if self.known_offers.pop(entry.key, None) is None:
                return []
            return self._lose(entry.key)
        self.known_offers[entry.key] = KnownOffer(source, entry.endpoint, entry.major_version,
                                                  entry.minor_version, now + entry.ttl)
        out = []
        for wanted in self.wanted.values():
            if not wanted.key.matches(entry.key):
                continue
            if not _version_ok(wanted.major, entry.major_version, ANY_MAJOR):
                continue
            if wanted.phase in (ClientPhase.SEARCHING, ClientPhase.DOWN):
                wanted.phase = ClientPhase.SERVICE_KNOWN
                wanted.resolved = entry.key
                wanted.generation = next(self._generations)
                out.append(SdEvent(EventKind.SERVICE_AVAILABLE, entry.key,
                                   endpoint=entry.endpoint))
        return out

    def _lose(self, key: ServiceKey) -> list:
        out = []
        for (k, eg) in [s for s in self.subscriptions if s[0] == key]:
            del self.subscriptions[(k, eg)]
        for wanted in self.wanted.values():
            if wanted.resolved == key and wanted.phase in (ClientPhase.SERVICE_KNOWN,
                                                           ClientPhase.SUBSCRIBED):
                # passive: a later offer brings the route back
                wanted.phase = ClientPhase.SEARCHING
                wanted.resolved = None
                wanted.generation = next(self._generations)
                out.append(SdEvent(EventKind.SERVICE_LOST, key))
        return out

    def _on_ack(self, entry: SdEntry, source: Endpoint, now: float) -> list:
        sub = self.subscriptions.get((entry.key, entry.eventgroup_id))
        if sub is None:
            return []
        if entry.ttl == 0:
            del self.subscriptions[(entry.key, entry.eventgroup_id)]
            self._refresh_phase(entry.key)
            return [SdEvent(EventKind.SUBSCRIBE_NACK, entry.key, entry.eventgroup_id)]
        was_acked = sub.acked
        sub.acked = True
        sub.attempts = 0
        sub.generation = next(self._generations)
        self._schedule(now + entry.ttl / 2, self._renew(sub))
        self._refresh_phase(entry.key)
        if was_acked:
            return []
        return [SdEvent(EventKind.SUBSCRIBED, entry.key, entry.eventgroup_id, sub.endpoint)]

    def _expiry_deadlines(self) -> list:
        return [offer.expires for offer in self.known_offers.values()]

    def _expire(self, now: float) -> list:
        out = []
        for key in [k for k, o in self.known_offers.items() if o.expires <= now]:
            del self.known_offers[key]
            out.extend(self._lose(key))
        return out
