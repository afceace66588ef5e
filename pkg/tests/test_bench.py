import io
import json

import pytest

from someip_bridge.bench.pipeline import Pipeline, run_pipeline
from someip_bridge.bench.pointcloud import make_pointcloud
from someip_bridge.bench.stats import (CheckpointTrace, LatencyStats, compute_stats, ratio_check,
                                       report, text_table, trend_check, write_json)
from someip_bridge.errors import InsufficientSamples
from someip_bridge.schema import SchemaRegistry, encode_bus


def trace(points, t1, t2, t3, t4, mid=0):
    return CheckpointTrace(mid, points, points * 16, t1, t2, t3, t4)


def test_span_arithmetic():
    t = trace(10, 0, 10, 1010, 1025)
    assert (t.bus_to_someip, t.someip_to_bus, t.communication) == (10, 15, 1000)
    s = compute_stats([t, t])[10]
    assert s["ratio_bus_to_someip"].median == pytest.approx(0.01)
    assert s["ratio_someip_to_bus"].median == pytest.approx(0.015)


def test_identical_traces_collapse_the_box():
    s = compute_stats([trace(1, 0, 5, 105, 110)] * 5)[1]["conv_bus_to_someip_ns"]
    assert s.min == s.q1 == s.median == s.q3 == s.max == 5
    assert s.count == 5


def test_box_statistics_order():
    s = LatencyStats.of([5, 1, 4, 2, 3])
    assert (s.min, s.median, s.max) == (1, 3, 5)
    assert s.min <= s.q1 <= s.median <= s.q3 <= s.max


def test_too_few_samples():
    with pytest.raises(InsufficientSamples):
        compute_stats([trace(1, 0, 1, 2, 3)])
    with pytest.raises(InsufficientSamples):
        compute_stats([])
    with pytest.raises(InsufficientSamples):
        compute_stats([trace(1, 0, 5, 5, 6)] * 3)  # zero communication span


def synthetic(conv_per_point=1.0, comm=100_000):
    out = []
    for i, n in enumerate([10, 100, 1000]):
        for k in range(5):
            c = int(n * conv_per_point) + k
            out.append(trace(n, 0, c, c + comm, 2 * c + comm, mid=i * 5 + k))
    return out


def test_trend_and_ratio_checks():
    traces = synthetic()
    stats = compute_stats(traces)
    assert trend_check(stats) == {"conv_bus_to_someip_ns": True, "conv_someip_to_bus_ns": True}
    r = ratio_check(stats, traces)
    assert r["ratio_bus_to_someip"]["below_bound"]
    # the largest class dominates: its median ratio is far above 3x the overall one
    assert not r["ratio_bus_to_someip"]["size_stable"]
    shrinking = [trace(t.points, 0, 2000 - t.bus_to_someip, 102000, 103000) for t in traces]
    assert not trend_check(compute_stats(shrinking))["conv_bus_to_someip_ns"]


def test_report_writers():
    doc = report(synthetic(), transport="inproc", meta={"seed": 1})
    assert doc["traces"] == 15 and set(doc["classes"]) == {"10", "100", "1000"}
    buf = io.StringIO()
    write_json(doc, buf)
    assert json.loads(buf.getvalue())["classes"]["100"]["payload_bytes"] == 1600
    table = text_table(doc)
    assert "transport=inproc" in table and "b2s" in table and "comm" in table


def test_pipeline_smoke_inproc():
    res = run_pipeline([100], 10, "inproc", warmup=1)
    assert len(res.traces) == 10 and res.lost == 0 and res.mismatched == 0
    for t in res.traces:
        assert t.t2 > t.t1 and t.t4 > t.t3 and t.points == 100
    assert res.metrics["b"]["bus_to_someip:/bench/points_in"]["converted"] == 11


def test_pipeline_preserves_bytes_over_udp():
    schema = SchemaRegistry.bundled().get("sensor_msgs/PointCloud2")
    with Pipeline("udp") as pipe:
        for n in (1, 5000):
            payload = encode_bus(schema, make_pointcloud(n, seed=n))
            assert pipe.send(payload) == payload
            assert pipe.take_trace(n, n) is not None


def test_unknown_transport():
    with pytest.raises(ValueError):
        Pipeline("carrier-pigeon")
