"""Latency bench: the A..D pipeline, statistics, mock peer and trace files."""

from .mock_ap import MockApPeer, PeerRole, run_mock_ap, synthetic_value
from .pipeline import IN_TOPIC, OUT_TOPIC, Pipeline, PipelineResult, bench_route, run_pipeline
from .pointcloud import DEFAULT_SIZES, POINT_STEP, POINTCLOUD_TYPE, make_pointcloud
from .replay import RecordKind, Recorder, TraceRecord, TraceWriter, load_trace, read_trace, replay
from .stats import (CheckpointTrace, LatencyStats, compute_stats, ratio_check, report, text_table,
                    trend_check, write_json)

__all__ = [
    "CheckpointTrace", "DEFAULT_SIZES", "IN_TOPIC", "LatencyStats", "MockApPeer", "OUT_TOPIC",
    "POINTCLOUD_TYPE", "POINT_STEP", "PeerRole", "Pipeline", "PipelineResult", "RecordKind",
    "Recorder", "TraceRecord", "TraceWriter", "bench_route", "compute_stats", "load_trace",
    "make_pointcloud", "ratio_check", "read_trace", "replay", "report", "run_mock_ap",
    "run_pipeline", "synthetic_value", "text_table", "trend_check", "write_json",
]
