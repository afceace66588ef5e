import io

import pytest

from someip_bridge.bench.replay import (MAGIC, VERSION, RecordKind, Recorder, TraceWriter,
                                        load_trace, read_trace, replay)
from someip_bridge.bus import Bus, Topic
from someip_bridge.errors import CorruptTraceFile

T = Topic("/rec", "geometry_msgs/Point")


def test_record_then_replay_is_identical(tmp_path):
    path = tmp_path / "five.trace"
    payloads = [bytes([i]) * (i + 1) for i in range(5)]
    with Bus("inproc") as bus, Recorder(bus, path, [T]) as rec:
        pub = bus.create_publisher(T)
        for p in payloads:
            pub.publish(p)
        assert rec.samples == 5
    records = load_trace(path)
    assert [r.kind for r in records] == [RecordKind.TOPIC] + [RecordKind.BUS_SAMPLE] * 5
    got = []
    with Bus("inproc") as bus:
        bus.create_subscriber(T, lambda s: got.append(s.payload))
        assert replay(records, bus, timing=False) == 5
    assert got == payloads


def test_replay_keeps_gaps_unless_disabled():
    buf = io.BytesIO()
    w = TraceWriter(buf)
    w.declare(T.name, T.type_name, t_ns=0)
    for i, t in enumerate((1_000_000_000, 1_500_000_000, 3_000_000_000)):
        w.sample(T.name, bytes([i]), t_ns=t)
    records = list(read_trace(io.BytesIO(buf.getvalue())))
    fake = {"now": 0}
    sleeps = []

    def sleep(s):
        sleeps.append(round(s, 6))
        fake["now"] += int(s * 1e9)
    with Bus("inproc") as bus:
        replay(records, bus, sleep=sleep, clock=lambda: fake["now"])
        assert sleeps == [0.5, 1.5]
        sleeps.clear()
        replay(records, bus, speed=2.0, sleep=sleep, clock=lambda: fake["now"])
        assert sleeps == [0.25, 0.75]
        sleeps.clear()
        replay(records, bus, timing=False, sleep=sleep)
        assert sleeps == []


def test_datagram_records_are_skipped_by_replay():
    buf = io.BytesIO()
    w = TraceWriter(buf)
    w.datagram("127.0.0.1:30490", b"\x01\x02")
    (rec,) = read_trace(io.BytesIO(buf.getvalue()))
    assert rec.kind is RecordKind.DATAGRAM and rec.name == "127.0.0.1:30490"
    with Bus("inproc") as bus:
        assert replay([rec], bus) == 0


def valid_trace():
    buf = io.BytesIO()
    w = TraceWriter(buf)
    w.declare(T.name, T.type_name)
    w.sample(T.name, b"abc")
    return buf.getvalue()


@pytest.mark.parametrize("data", [b"", b"NOTATRACE", MAGIC + bytes([VERSION + 1])])
def test_bad_header(data):
    with pytest.raises(CorruptTraceFile):
        list(read_trace(io.BytesIO(data)))


def test_truncation_anywhere_is_detected():
    data = valid_trace()
    assert len(list(read_trace(io.BytesIO(data)))) == 2
    header = len(MAGIC) + 1
    ends = set()
    # cutting exactly at a record boundary is a shorter, valid trace
    pos = header
    while pos < len(data):
        ends.add(pos)
        pos += 4 + int.from_bytes(data[pos:pos + 4], "big")
    for cut in range(len(data)):
        if cut in ends:
            continue
        with pytest.raises(CorruptTraceFile):
            list(read_trace(io.BytesIO(data[:cut])))


def test_undeclared_topic_and_bad_kind():
    data = bytearray(valid_trace())
    first_len = int.from_bytes(data[8:12], "big")
    orphan = bytes(data[:8]) + bytes(data[8 + 4 + first_len:])
    with pytest.raises(CorruptTraceFile, match="undeclared"):
        list(read_trace(io.BytesIO(orphan)))
    data[12] = 9  # record kind
    with pytest.raises(CorruptTraceFile):
        list(read_trace(io.BytesIO(bytes(data))))
