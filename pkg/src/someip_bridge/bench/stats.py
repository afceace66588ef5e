"""Box-plot summaries of checkpoint traces, plus the report writers."""

from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass
from typing import Optional

from ..errors import InsufficientSamples


@dataclass(frozen=True)
class CheckpointTrace:
    message_id: int
    points: int
    payload_bytes: int
    t1: int
    t2: int
    t3: int
    t4: int

    @property
    def bus_to_someip(self) -> int:
        return self.t2 - self.t1

    @property
    def someip_to_bus(self) -> int:
        return self.t4 - self.t3

    @property
    def communication(self) -> int:
        return self.t3 - self.t2


@dataclass(frozen=True)
class LatencyStats:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    count: int

    @classmethod
    def of(cls, values) -> "LatencyStats":
        values = list(values)
        if len(values) < 2:
            raise InsufficientSamples(f"need at least 2 samples, got {len(values)}")
        q1, median, q3 = statistics.quantiles(values, n=4, method="inclusive")
        return cls(min(values), q1, median, q3, max(values), len(values))


METRICS = {
    "conv_bus_to_someip_ns": lambda t: t.bus_to_someip,
    "conv_someip_to_bus_ns": lambda t: t.someip_to_bus,
    "comm_ns": lambda t: t.communication,
    "ratio_bus_to_someip": lambda t: t.bus_to_someip / t.communication,
    "ratio_someip_to_bus": lambda t: t.someip_to_bus / t.communication,
}


def compute_stats(traces) -> dict:
    """``{points: {metric: LatencyStats}}`` for every size class."""
    classes: dict = {}
    for t in traces:
        classes.setdefault(t.points, []).append(t)
    if not classes:
        raise InsufficientSamples("no traces")
    out = {}
    for points in sorted(classes):
        group = classes[points]
        if any(t.communication <= 0 for t in group):
            raise InsufficientSamples(f"non-positive communication span in class {points}")
        out[points] = {name: LatencyStats.of(fn(t) for t in group) for name, fn in METRICS.items()}
    return out


def overall(traces, metric: str) -> LatencyStats:
    return LatencyStats.of(METRICS[metric](t) for t in traces)


def medians(stats: dict, metric: str) -> list:
    return [stats[p][metric].median for p in sorted(stats)]


def is_non_decreasing(values) -> bool:
    return all(a <= b for a, b in zip(values, values[1:]))


def trend_check(stats: dict) -> dict:
    return {m: is_non_decreasing(medians(stats, m))
            for m in ("conv_bus_to_someip_ns", "conv_someip_to_bus_ns")}


def ratio_check(stats: dict, traces, bound: float = 0.05, spread: float = 3.0) -> dict:
    """Median ratio under ``bound`` and no class median above ``spread`` x overall."""
    out = {}
    for m in ("ratio_bus_to_someip", "ratio_someip_to_bus"):
        whole = overall(traces, m).median
        per_class = medians(stats, m)
        out[m] = {
            "overall_median": whole,
            "below_bound": whole < bound,
            "size_stable": all(v <= spread * whole for v in per_class),
            "worst_class_median": max(per_class),
        }
    return out


def report(traces, *, transport: str, meta: Optional[dict] = None) -> dict:
    stats = compute_stats(traces)
    return {
        "transport": transport,
        "meta": meta or {},
        "classes": {str(p): {"payload_bytes": next(t.payload_bytes for t in traces
                                                   if t.points == p),
                             **{m: asdict(s) for m, s in cls.items()}}
                    for p, cls in stats.items()},
        "trend": trend_check(stats),
        "ratio": ratio_check(stats, traces),
        "traces": len(traces),
    }


def write_json(doc: dict, fp) -> None:
    json.dump(doc, fp, indent=2, sort_keys=True)
    fp.write("\n")


def _us(ns: float) -> str:
    return f"{ns / 1000:9.1f}"


def text_table(doc: dict) -> str:
    lines = [f"transport={doc['transport']} traces={doc['traces']}", ""]
    head = f"{'points':>8} {'bytes':>9} {'dir':>4} {'min':>9} {'q1':>9} {'median':>9} " \
           f"{'q3':>9} {'max':>9}  (us)  ratio_med"
    lines.append(head)
    for points, cls in doc["classes"].items():
        for tag, conv, ratio in (("b2s", "conv_bus_to_someip_ns", "ratio_bus_to_someip"),
                                 ("s2b", "conv_someip_to_bus_ns", "ratio_someip_to_bus")):
            s = cls[conv]
            lines.append(f"{points:>8} {cls['payload_bytes']:>9} {tag:>4} {_us(s['min'])} "
                         f"{_us(s['q1'])} {_us(s['median'])} {_us(s['q3'])} {_us(s['max'])}"
                         f"        {cls[ratio]['median']:.4f}")
        s = cls["comm_ns"]
        lines.append(f"{points:>8} {cls['payload_bytes']:>9} {'comm':>4} {_us(s['min'])} "
                     f"{_us(s['q1'])} {_us(s['median'])} {_us(s['q3'])} {_us(s['max'])}")
    lines.append("")
    for m, ok in doc["trend"].items():
        lines.append(f"trend {m}: {'non-decreasing' if ok else 'NOT monotone'}")
    for m, r in doc["ratio"].items():
        lines.append(f"{m}: overall median {r['overall_median']:.4f} "
                     f"below_bound={r['below_bound']} size_stable={r['size_stable']}")
    return "\n".join(lines) + "\n"
