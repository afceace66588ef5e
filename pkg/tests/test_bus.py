import os
import random
import threading
import time

import pytest

from someip_bridge.bus import (DEFAULT_FRAGMENT, FRAME, FRAME_HEADER_SIZE, Bus, Reassembler,
                               Topic, fragment)
from someip_bridge.errors import BusClosed, TypeMismatch

POINT = Topic("/point", "geometry_msgs/Point")


class Collector:
    def __init__(self):
        self.samples = []
        self.cond = threading.Condition()

    def __call__(self, sample):
        with self.cond:
            self.samples.append(sample)
            self.cond.notify_all()

    def wait(self, n, timeout=5.0):
        with self.cond:
            self.cond.wait_for(lambda: len(self.samples) >= n, timeout)
        return self.samples


@pytest.fixture(params=["inproc", "udp"])
def bus(request):
    with Bus(request.param) as b:
        yield b


def test_publish_without_subscribers(bus):
    pub = bus.create_publisher(POINT)
    assert pub.publish(b"x") == 1
    assert pub.publish(b"y") == 2


def test_fan_out_to_two_subscribers(bus):
    a, b = Collector(), Collector()
    bus.create_subscriber(POINT, a)
    bus.create_subscriber(POINT, b)
    pub = bus.create_publisher(POINT)
    pub.publish(b"hello")
    assert [s.payload for s in a.wait(1)] == [b"hello"]
    assert [s.payload for s in b.wait(1)] == [b"hello"]
    time.sleep(0.05)
    assert len(a.samples) == len(b.samples) == 1


def test_type_mismatch(bus):
    bus.create_publisher(POINT)
    with pytest.raises(TypeMismatch):
        bus.create_subscriber(Topic("/point", "sensor_msgs/NavSatFix"), Collector())
    with pytest.raises(TypeMismatch):
        bus.create_publisher(Topic("/point", "std_msgs/Header"))


def test_fifo_sequence(bus):
    got = Collector()
    bus.create_subscriber(POINT, got)
    pub = bus.create_publisher(POINT)
    for i in range(3):
        pub.publish(bytes([i]))
    samples = got.wait(3)
    assert [s.seq for s in samples] == [1, 2, 3]
    assert [s.payload for s in samples] == [b"\0", b"\1", b"\2"]


def test_publish_after_close(bus):
    pub = bus.create_publisher(POINT)
    bus.close()
    with pytest.raises(BusClosed):
        pub.publish(b"late")
    with pytest.raises(BusClosed):
        bus.create_publisher(POINT)


def test_late_joiner_sees_only_later_samples(bus):
    pub = bus.create_publisher(POINT)
    pub.publish(b"early")
    got = Collector()
    bus.create_subscriber(POINT, got)
    pub.publish(b"late")
    assert [s.payload for s in got.wait(1)] == [b"late"]


def test_empty_topic_name_rejected(bus):
    with pytest.raises(ValueError):
        bus.create_publisher(Topic("", "x/Y"))


def test_publisher_state_independent_of_subscribers(bus):
    pub = bus.create_publisher(POINT)
    pub.publish(b"a")
    before = pub.state()
    sub = bus.create_subscriber(POINT, Collector())
    sub.close()
    assert pub.state() == before


def test_callback_failure_isolated(bus):
    def boom(_sample):
        raise RuntimeError("subscriber bug")
    good = Collector()
    bad = bus.create_subscriber(POINT, boom)
    bus.create_subscriber(POINT, good)
    bus.create_publisher(POINT).publish(b"v")
    assert good.wait(1)[0].payload == b"v"
    deadline = time.monotonic() + 2
    while bad.errors == 0 and time.monotonic() < deadline:
        time.sleep(0.01)
    assert bad.errors == 1


def test_concurrent_publishers_keep_per_publisher_order(bus):
    got = Collector()
    bus.create_subscriber(POINT, got)
    pubs = [bus.create_publisher(POINT) for _ in range(3)]

    def run(i, pub):
        for n in range(50):
            pub.publish(bytes([i, n]))
    threads = [threading.Thread(target=run, args=(i, p)) for i, p in enumerate(pubs)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    samples = got.wait(150)
    assert len(samples) == 150
    for i in range(3):
        assert [s.payload[1] for s in samples if s.payload[0] == i] == list(range(50))


def test_one_mib_over_udp_is_fragmented_and_reassembled():
    payload = os.urandom(1 << 20)
    with Bus("udp") as bus:
        got = Collector()
        sub = bus.create_subscriber(POINT, got)
        bus.create_publisher(POINT).publish(payload)
        (sample,) = got.wait(1, timeout=10)
        assert sample.payload == payload
        assert sub.dropped == 0


def test_transports_deliver_identical_bytes():
    payloads = [os.urandom(n) for n in (0, 1, 100, DEFAULT_FRAGMENT, 3 * DEFAULT_FRAGMENT + 5)]
    seen = {}
    for transport in ("inproc", "udp"):
        with Bus(transport) as bus:
            got = Collector()
            bus.create_subscriber(POINT, got)
            pub = bus.create_publisher(POINT)
            for p in payloads:
                pub.publish(p)
            seen[transport] = [s.payload for s in got.wait(len(payloads))]
    assert seen["inproc"] == seen["udp"] == payloads


# fragmentation oracle

def test_fragment_layout():
    body = bytes(range(256)) * 200  # 51200 bytes
    frames = fragment(0xABCD, 9, body, size=16384)
    assert len(frames) == 4
    for i, frame in enumerate(frames):
        assert FRAME.unpack_from(frame) == (0xABCD, 9, i, 4)
        assert bytes(frame[FRAME_HEADER_SIZE:]) == body[i * 16384:(i + 1) * 16384]
    assert fragment(1, 1, b"")[0] == FRAME.pack(1, 1, 0, 1)


def test_reassembly_out_of_order_and_drop_detection():
    r = Reassembler()
    body = os.urandom(40000)
    frames = fragment(7, 1, body, size=10000)
    random.Random(3).shuffle(frames)
    results = [r.feed(bytes(f), "src") for f in frames]
    assert results[:-1] == [None] * (len(frames) - 1)
    assert results[-1] == (7, 1, body)
    # seq 2 loses a fragment, seq 3 arrives complete
    broken = fragment(7, 2, body, size=10000)[:-1]
    for f in broken:
        r.feed(bytes(f), "src")
    for f in fragment(7, 3, b"ok", size=10000):
        assert r.feed(bytes(f), "src") == (7, 3, b"ok")
    assert r.dropped == 1
    assert r.feed(b"short", "src") is None
    assert r.dropped == 2
