import random

import pytest

from someip_bridge.errors import AlreadyOffered, NotDiscovered
from someip_bridge.net import Endpoint
from someip_bridge.sd import (ClientPhase, EventKind, Send, SdClient, SdEvent, SdServer,
                              SdTiming, ServerPhase)
from someip_bridge.sd_wire import (ANY_INSTANCE, EntryType, SdEntry, SdMessage, ServiceKey,
                                   decode_sd, encode_sd)

KEY = ServiceKey(0x1234, 0x0001)
EG = 1
SERVER_SD = Endpoint("127.0.0.1", 30490)
CLIENT_SD = Endpoint("127.0.0.1", 30491)
SERVER_DATA = Endpoint("127.0.0.1", 40000)
CLIENT_DATA = Endpoint("127.0.0.1", 40001)


class TwoParty:
    """Lossless, zero-latency wire between one server and one client."""

    def __init__(self, timing=None, seed=1, drop=lambda send, sender: False):
        self.timing = timing or SdTiming()
        self.server = SdServer(self.timing, random.Random(seed))
        self.client = SdClient(self.timing, random.Random(seed + 1))
        self.now = 0.0
        self.wire: list = []
        self.events: list = []
        self.drop = drop
        self.auto_subscribe = True

    def _peer(self, machine):
        return (self.client, SERVER_SD) if machine is self.server else (self.server, CLIENT_SD)

    def feed(self, machine, outputs):
        queue = [(machine, o) for o in outputs]
        while queue:
            origin, out = queue.pop(0)
            if isinstance(out, SdEvent):
                self.events.append((self.now, origin.role.value, out))
                if (origin is self.client and self.auto_subscribe
                        and out.kind is EventKind.SERVICE_AVAILABLE):
                    queue += [(origin, o) for o in origin.subscribe_eventgroup(
                        out.key, EG, CLIENT_DATA, self.now)]
                continue
            assert isinstance(out, Send)
            # the wire format is part of the loop
            msg = decode_sd(encode_sd(out.message))
            self.wire.append((self.now, origin.role.value, out.dest, msg))
            if self.drop(out, origin):
                continue
            peer, source = self._peer(origin)
            queue += [(peer, o) for o in peer.handle(msg, source, self.now)]

    def command(self, machine, fn, *args):
        self.feed(machine, fn(*args, self.now))

    def run_until(self, t_end):
        while True:
            deadlines = [d for d in (self.server.next_deadline(), self.client.next_deadline())
                         if d is not None and d <= t_end]
            if not deadlines:
                break
            self.now = max(self.now, min(deadlines))
            for m in (self.server, self.client):
                d = m.next_deadline()
                if d is not None and d <= self.now:
                    self.feed(m, m.poll(self.now))
        self.now = t_end

    def offer(self):
        self.command(self.server, self.server.offer_service, KEY, 1, 0, SERVER_DATA)

    def find(self):
        self.feed(self.client, self.client.find_service(KEY, self.now, 1))

    def kinds(self, role=None):
        return [e.kind for _, r, e in self.events if role in (None, r)]

    def sent(self, role, etype):
        return [(t, m) for t, r, _, m in self.wire
                if r == role and any(e.entry_type is etype for e in m.entries)]


def subscribed_time(tp):
    for t, r, e in tp.events:
        if r == "client" and e.kind is EventKind.SUBSCRIBED:
            return t
    return None


# offer timing

def test_first_offer_within_initial_window_then_doubling():
    tp = TwoParty()
    tp.offer()
    assert tp.server.phase(KEY) is ServerPhase.INITIAL
    tp.run_until(5.0)
    times = [t for t, _ in tp.sent("server", EntryType.OFFER_SERVICE)]
    t0 = times[0]
    assert 0.010 <= t0 <= 0.100
    gaps = [round(b - a, 6) for a, b in zip(times, times[1:])]
    assert gaps[:3] == [0.2, 0.4, 0.8]
    assert all(g == 1.0 for g in gaps[3:])
    assert tp.server.phase(KEY) is ServerPhase.MAIN


def test_stop_after_offer_emits_single_withdraw():
    tp = TwoParty()
    tp.offer()
    tp.run_until(1.0)
    before = len(tp.wire)
    tp.command(tp.server, tp.server.stop_offer, KEY)
    withdraws = tp.wire[before:]
    assert len(withdraws) == 1
    (entry,) = withdraws[0][3].entries
    assert entry.entry_type is EntryType.OFFER_SERVICE and entry.ttl == 0
    tp.run_until(5.0)
    assert len(tp.wire) == before + 1


def test_duplicate_offer():
    tp = TwoParty()
    tp.offer()
    with pytest.raises(AlreadyOffered):
        tp.offer()


# find

def test_cold_find_emits_find_with_given_instance():
    client = SdClient()
    out = client.find_service(ServiceKey(0x1234, ANY_INSTANCE), 0.0)
    (send,) = out
    (entry,) = send.message.entries
    assert send.dest is None
    assert entry.entry_type is EntryType.FIND_SERVICE
    assert entry.key == ServiceKey(0x1234, ANY_INSTANCE)
    assert client.phase(ServiceKey(0x1234, ANY_INSTANCE)) is ClientPhase.SEARCHING


def test_cached_offer_means_zero_messages():
    client = SdClient()
    offer = SdEntry(EntryType.OFFER_SERVICE, KEY, 1, 3, endpoint=SERVER_DATA)
    client.handle(SdMessage((offer,)), SERVER_SD, 0.0)
    out = client.find_service(KEY, 1.0)
    assert not [o for o in out if isinstance(o, Send)]
    assert client.phase(KEY) is ClientPhase.SERVICE_KNOWN


def test_offer_after_two_finds_stops_finding():
    tp = TwoParty()
    tp.auto_subscribe = False
    tp.find()
    tp.run_until(0.6)
    assert len(tp.sent("client", EntryType.FIND_SERVICE)) == 2
    tp.offer()
    tp.run_until(0.75)
    assert tp.client.phase(KEY) is ClientPhase.SERVICE_KNOWN
    tp.run_until(5.0)
    assert len(tp.sent("client", EntryType.FIND_SERVICE)) == 2


def test_find_retries_exhaust_into_timeout():
    tp = TwoParty()
    tp.find()
    tp.run_until(10.0)
    assert len(tp.sent("client", EntryType.FIND_SERVICE)) == 1 + tp.timing.find_retries
    assert tp.kinds("client") == [EventKind.FIND_TIMEOUT]


def test_server_answers_find_with_unicast_offer():
    server = SdServer(rng=random.Random(0))
    server.offer_service(KEY, 1, 0, SERVER_DATA, 0.0)
    server.poll(0.2)
    find = SdEntry(EntryType.FIND_SERVICE, KEY, 1, 3, minor_version=0xFFFFFFFF)
    (send,) = server.handle(SdMessage((find,)), CLIENT_SD, 0.2)
    assert send.dest == CLIENT_SD
    (entry,) = send.message.entries
    assert entry.entry_type is EntryType.OFFER_SERVICE and entry.endpoint == SERVER_DATA


def test_find_ignored_before_first_announcement():
    server = SdServer(rng=random.Random(0))
    server.offer_service(KEY, 1, 0, SERVER_DATA, 0.0)
    find = SdEntry(EntryType.FIND_SERVICE, KEY, 1, 3, minor_version=0xFFFFFFFF)
    assert server.handle(SdMessage((find,)), CLIENT_SD, 0.0) == []


def test_any_instance_find_matches():
    server = SdServer(rng=random.Random(0))
    server.offer_service(KEY, 1, 0, SERVER_DATA, 0.0)
    server.poll(1.0)
    find = SdEntry(EntryType.FIND_SERVICE, ServiceKey(0x1234, ANY_INSTANCE), 0xFF, 3,
                   minor_version=0xFFFFFFFF)
    out = server.handle(SdMessage((find,)), CLIENT_SD, 1.0)
    assert len(out) == 1 and out[0].dest == CLIENT_SD


def test_offer_ttl_bookkeeping():
    client = SdClient()
    offer = SdEntry(EntryType.OFFER_SERVICE, KEY, 1, 3, endpoint=SERVER_DATA)
    client.handle(SdMessage((offer,)), SERVER_SD, 10.0)
    assert client.known_offers[KEY].expires == 13.0
    assert client.lookup(KEY, 12.9) is not None
    assert client.lookup(KEY, 13.0) is None


# subscribe

def test_subscribe_before_offer():
    with pytest.raises(NotDiscovered):
        SdClient().subscribe_eventgroup(KEY, EG, CLIENT_DATA, 0.0)


def test_subscribe_goes_to_offer_source_and_ack_subscribes():
    tp = TwoParty()
    tp.offer()
    tp.find()
    tp.run_until(1.0)
    subs = [(d, m) for _, r, d, m in tp.wire
            if r == "client" and m.entries[0].entry_type is EntryType.SUBSCRIBE_EVENTGROUP]
    assert subs and subs[0][0] == SERVER_SD
    assert subs[0][1].entries[0].endpoint == CLIENT_DATA
    assert tp.client.is_subscribed(KEY, EG)
    assert tp.server.subscribers(KEY, EG, tp.now) == [CLIENT_DATA]


def test_missing_ack_retries_then_times_out():
    def drop_acks(send, sender):
        return any(e.entry_type is EntryType.SUBSCRIBE_EVENTGROUP_ACK
                   for e in send.message.entries)
    tp = TwoParty(drop=drop_acks)
    tp.offer()
    tp.find()
    tp.run_until(3.0)
    attempts = [m for _, r, _, m in tp.wire
                if r == "client" and m.entries[0].entry_type is EntryType.SUBSCRIBE_EVENTGROUP]
    assert len(attempts) == tp.timing.subscribe_attempts
    assert EventKind.SUBSCRIBE_TIMEOUT in tp.kinds("client")
    assert not tp.client.is_subscribed(KEY, EG)


def test_subscription_renewed_before_ttl():
    tp = TwoParty()
    tp.offer()
    tp.find()
    tp.run_until(20.0)
    assert tp.client.is_subscribed(KEY, EG)
    assert tp.server.subscribers(KEY, EG, tp.now) == [CLIENT_DATA]


# two-party properties

@pytest.mark.parametrize("order", ["offer_first", "find_first"])
@pytest.mark.parametrize("seed", range(10))
def test_handshake_both_orders(order, seed):
    tp = TwoParty(seed=seed)
    if order == "offer_first":
        tp.offer()
        tp.run_until(0.5)
        tp.find()
    else:
        tp.find()
        tp.run_until(0.3)
        tp.offer()
    tp.run_until(5.0)
    t = subscribed_time(tp)
    # budget: initial delay + one repetition + ack round trip
    assert t is not None and t <= 0.5 + tp.timing.initial_delay_max + tp.timing.repetition_base
    assert tp.client.phase(KEY) is ClientPhase.SUBSCRIBED
    assert tp.server.subscribers(KEY, EG, tp.now) == [CLIENT_DATA]


def test_ttl_expiry_drops_out_of_subscribed():
    tp = TwoParty()
    tp.offer()
    tp.find()
    tp.run_until(2.0)
    assert tp.client.phase(KEY) is ClientPhase.SUBSCRIBED
    # the server vanishes without a word: no further offers, no acks
    silent = tp.server
    tp.server = SdServer(tp.timing)
    silent_offer_at = max(t for t, _ in tp.sent("server", EntryType.OFFER_SERVICE))
    tp.run_until(silent_offer_at + tp.timing.offer_ttl + 0.01)
    assert tp.client.lookup(KEY, tp.now) is None
    assert tp.client.phase(KEY) is not ClientPhase.SUBSCRIBED
    lost = [t for t, r, e in tp.events if e.kind is EventKind.SERVICE_LOST]
    assert lost and abs(lost[0] - (silent_offer_at + tp.timing.offer_ttl)) < 1e-9
    assert silent.offers  # it never withdrew


def test_ttl_zero_withdraw_is_immediate_and_reoffer_recovers():
    tp = TwoParty()
    tp.offer()
    tp.find()
    tp.run_until(2.0)
    tp.command(tp.server, tp.server.stop_offer, KEY)
    assert tp.client.lookup(KEY, tp.now) is None
    assert tp.client.phase(KEY) is ClientPhase.SEARCHING
    assert tp.kinds("client")[-1] is EventKind.SERVICE_LOST
    tp.offer()
    tp.run_until(4.0)
    assert tp.client.phase(KEY) is ClientPhase.SUBSCRIBED


def test_expired_subscriber_removed_on_server():
    tp = TwoParty()
    tp.offer()
    tp.find()
    tp.run_until(2.0)
    tp.client = SdClient(tp.timing)  # client disappears; renewals stop
    tp.run_until(10.0)
    assert tp.server.subscribers(KEY, EG, tp.now) == []
    assert EventKind.SUBSCRIBER_REMOVED in tp.kinds("server")


def test_nack_when_eventgroup_not_offered():
    tp = TwoParty()
    tp.command(tp.server, lambda now: tp.server.offer_service(KEY, 1, 0, SERVER_DATA, now,
                                                              eventgroups=(7,)))
    tp.find()
    tp.run_until(2.0)
    assert EventKind.SUBSCRIBE_NACK in tp.kinds("client")
    assert not tp.client.is_subscribed(KEY, EG)


def test_malformed_entries_counted_not_fatal():
    client = SdClient()
    out = client.handle(SdMessage((), skipped=2), SERVER_SD, 0.0)
    assert out == [] and client.malformed == 2
