"""The A -> B -> C -> D measurement pipeline.

A publishes point clouds on a bus topic; bridge B converts them to SOME/IP
Notifications; bridge C receives them, converts back and publishes on a
second topic; D collects.  Checkpoints 1..4 come from the bridges' trace
sink.  Every round sends each size class once, in a freshly shuffled
order, so host drift and cache pollution from the largest class are spread
over all classes instead of always hitting the one that follows it.
"""

from __future__ import annotations

import gc
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from ..bridge import Bridge
from ..bus import Bus, Topic
from ..config import BridgeRouteConfig
from ..net import SD_MULTICAST, Endpoint
from ..schema import Direction, SchemaRegistry, encode_bus
from ..trace import TraceSink
from ..transport import SimNetwork, UdpNetwork
from .pointcloud import DEFAULT_SIZES, POINTCLOUD_TYPE, make_pointcloud
from .stats import CheckpointTrace

log = logging.getLogger(__name__)

IN_TOPIC = "/bench/points_in"
OUT_TOPIC = "/bench/points_out"


def bench_route(direction: Direction, topic: str, *, address: str = "127.0.0.1", port: int = 0,
                type_name: str = POINTCLOUD_TYPE, service_id: int = 0x1234,
                instance_id: int = 0x0001, event_id: int = 0x0001,
                eventgroup_id: int = 0x0001) -> BridgeRouteConfig:
    return BridgeRouteConfig(direction, topic, type_name, service_id, instance_id, event_id,
                             eventgroup_id, 1, 0, "PointCloudIface", "points", "PointCloudService",
                             "bench", address, port)


@dataclass
class PipelineResult:
    traces: list
    lost: int = 0
    mismatched: int = 0
    sink_grows: int = 0
    metrics: dict = field(default_factory=dict)


class Pipeline:
    """Set up A, B, C, D on one host; ``send`` pushes one sample through."""

    def __init__(self, transport: str = "inproc", *, group: Endpoint = SD_MULTICAST,
                 registry: Optional[SchemaRegistry] = None, seed: int = 0):
        if transport not in ("inproc", "udp"):
            raise ValueError(f"unknown transport {transport!r}")
        self.transport = transport
        self.registry = registry or SchemaRegistry.bundled()
        self.schema = self.registry.get(POINTCLOUD_TYPE)
        self.sink = TraceSink(capacity=64)
        rng = random.Random(seed)
        if transport == "inproc":
            self.net = SimNetwork(latency=0.0)
            self.bus = Bus("inproc")
            sd_b, sd_c = Endpoint("127.0.0.1", 30491), Endpoint("127.0.0.1", 30492)
            port_b, port_c = 30501, 30502
        else:
            self.net = UdpNetwork()
            self.bus = Bus("udp")
            sd_b = sd_c = Endpoint("127.0.0.1", 0)
            port_b = port_c = 0
        self.b = Bridge(self.net, self.bus, sd_b, group=group, registry=self.registry,
                        sink=self.sink, rng=rng)
        self.c = Bridge(self.net, self.bus, sd_c, group=group, registry=self.registry,
                        sink=self.sink, rng=rng)
        self.route_b = self.b.add_route(bench_route(Direction.BUS_TO_SOMEIP, IN_TOPIC, port=port_b))
        self.route_c = self.c.add_route(bench_route(Direction.SOMEIP_TO_BUS, OUT_TOPIC, port=port_c))
        self._received: list = []
        self._arrived = threading.Event()
        self.publisher = None
        self.collector = None

    def _collect(self, sample) -> None:
        self._received.append(sample.payload)
        self._arrived.set()

    def start(self, timeout: float = 10.0) -> None:
        self.b.start()
        self.c.start()
        self.collector = self.bus.create_subscriber(Topic(OUT_TOPIC, POINTCLOUD_TYPE),
                                                    self._collect)
        self.publisher = self.bus.create_publisher(Topic(IN_TOPIC, POINTCLOUD_TYPE))
        if not self._wait(lambda: self.route_c.forwarding and bool(self.route_b.subscribers()),
                          timeout):
            raise TimeoutError("bench bridges did not complete discovery")

    def _wait(self, predicate, timeout: float) -> bool:
        if isinstance(self.net, SimNetwork):
            return self.net.run_until_true(predicate, timeout)
        deadline = time.monotonic() + timeout
        while not predicate():
            if time.monotonic() > deadline:
                return False
            time.sleep(0.005)
        return True

    def send(self, payload: bytes, timeout: float = 5.0) -> Optional[bytes]:
        """Publish at A and return what D received (None on loss)."""
        self._received.clear()
        self._arrived.clear()
        self.publisher.publish(payload)
        if isinstance(self.net, SimNetwork):
            self.net.run_until_true(lambda: bool(self._received), timeout)
        else:
            self._arrived.wait(timeout)
        return self._received[0] if self._received else None

    def take_trace(self, points: int, message_id: int) -> Optional[CheckpointTrace]:
        marks = {}
        size = 0
        for rec in self.sink.records():
            marks[rec["checkpoint"]] = rec["t_ns"]
            if rec["checkpoint"] == 1:
                size = rec["size"]
        self.sink.clear()
        if len(marks) != 4:
            return None
        return CheckpointTrace(message_id, points, size, marks[1], marks[2], marks[3], marks[4])

    def close(self) -> None:
        self.b.stop()
        self.c.stop()
        self.bus.close()
        if isinstance(self.net, UdpNetwork):
            self.net.close()

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()


def run_pipeline(sizes=DEFAULT_SIZES, iterations: int = 20, transport: str = "inproc", *,
                 warmup: int = 2, timeout: float = 5.0, seed: int = 0,
                 group: Endpoint = SD_MULTICAST, pause_gc: bool = True) -> PipelineResult:
    """Push ``warmup + iterations`` samples of every size through A..D."""
    sizes = list(sizes)
    with Pipeline(transport, group=group, seed=seed) as pipe:
        payloads = {n: encode_bus(pipe.schema, make_pointcloud(n, seed=seed + i))
                    for i, n in enumerate(sizes)}
        result = PipelineResult([])
        message_id = 0
        order_rng = random.Random(seed)
        gc.collect()
        gc_was_enabled = gc.isenabled()
        if pause_gc:
            gc.disable()
        try:
            for rnd in range(warmup + iterations):
                order = list(sizes)
                order_rng.shuffle(order)
                for n in order:
                    message_id += 1
                    got = pipe.send(payloads[n], timeout)
                    trace = pipe.take_trace(n, message_id)
                    if rnd < warmup:
                        continue
                    if got is None or trace is None:
                        result.lost += 1
                        continue
                    if got != payloads[n]:
                        result.mismatched += 1
                    result.traces.append(trace)
        finally:
            if gc_was_enabled:
                gc.enable()
        result.sink_grows = pipe.sink.grows
        result.metrics = {"b": pipe.b.metrics(), "c": pipe.c.metrics()}
    return result
