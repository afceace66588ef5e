import random

import pytest

from someip_bridge.bench.mock_ap import MockApPeer, PeerRole, digest, synthetic_value
from someip_bridge.bridge import Bridge
from someip_bridge.bus import Bus, Topic
from someip_bridge.config import BridgeRouteConfig
from someip_bridge.errors import DiscoveryTimeout
from someip_bridge.net import Endpoint
from someip_bridge.schema import (BUNDLED_EVAL_TYPES, Direction, SchemaRegistry, encode_bus,
                                  encode_someip, validate)
from someip_bridge.transport import SimNetwork

REGISTRY = SchemaRegistry.bundled()


def cfg(direction, type_name="sensor_msgs/NavSatFix"):
    return BridgeRouteConfig(direction, "/t", type_name, 0x4000, 1, 1, 1, 1, 0, "I", "e", "s",
                             "p", "127.0.0.1", 0)


@pytest.mark.parametrize("type_name", BUNDLED_EVAL_TYPES)
def test_synthetic_values_conform(type_name):
    schema = REGISTRY.get(type_name)
    for seed in range(5):
        validate(schema, synthetic_value(schema, random.Random(seed)))


def test_receiver_digests_match_what_was_published():
    net, bus = SimNetwork(), Bus("inproc")
    bridge = Bridge(net, bus, Endpoint("127.0.0.1", 30490), registry=REGISTRY,
                    rng=random.Random(1))
    route = bridge.add_route(cfg(Direction.BUS_TO_SOMEIP))
    bridge.start()
    rx = MockApPeer(PeerRole.RECEIVER, route.cfg, net, Endpoint("127.0.0.2", 30490),
                    registry=REGISTRY, rng=random.Random(2))
    rx.start()
    rx.wait_ready(5)
    rng = random.Random(3)
    values = [synthetic_value(route.schema, rng) for _ in range(10)]
    pub = bus.create_publisher(Topic("/t", route.cfg.type_name))
    for v in values:
        pub.publish(encode_bus(route.schema, v))
    net.run_for(0.1)
    assert rx.invalid == 0
    assert rx.values == values
    assert rx.digests == [digest(encode_someip(route.schema, v)) for v in values]
    rx.stop()
    bridge.stop()
    bus.close()


def test_receiver_without_a_service_times_out():
    net = SimNetwork()
    rx = MockApPeer(PeerRole.RECEIVER, cfg(Direction.BUS_TO_SOMEIP), net,
                    Endpoint("127.0.0.2", 30490), registry=REGISTRY)
    rx.start()
    with pytest.raises(DiscoveryTimeout, match="0x4000"):
        rx.wait_ready(3)


def test_sender_rejects_the_receive_path():
    net = SimNetwork()
    rx = MockApPeer(PeerRole.RECEIVER, cfg(Direction.BUS_TO_SOMEIP), net,
                    Endpoint("127.0.0.2", 30490), registry=REGISTRY)
    rx.start()
    with pytest.raises(ValueError):
        rx.send_payload(b"")


def test_invalid_notification_is_counted():
    net = SimNetwork()
    c = cfg(Direction.BUS_TO_SOMEIP, "geometry_msgs/Point")
    tx = MockApPeer(PeerRole.SENDER, c, net, Endpoint("127.0.0.2", 30490), registry=REGISTRY,
                    rng=random.Random(1))
    rx = MockApPeer(PeerRole.RECEIVER, c, net, Endpoint("127.0.0.3", 30490), registry=REGISTRY,
                    rng=random.Random(2))
    tx.start()
    rx.start()
    rx.wait_ready(5)
    tx.send_payload(b"\x00" * 3)  # too short for three float64
    tx.send_value({"x": 1.0, "y": 2.0, "z": 3.0})
    net.run_for(0.1)
    assert (rx.invalid, rx.received) == (1, 1)
    assert rx.values == [{"x": 1.0, "y": 2.0, "z": 3.0}]
