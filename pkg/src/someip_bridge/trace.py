"""Checkpoint recording for the conversion spans.

Checkpoints:

1. just before bus -> SOME/IP conversion
2. just after it (immediately before the SOME/IP send)
3. immediately after a SOME/IP message is received
4. just after SOME/IP -> bus conversion

Marks go into preallocated columns, so recording does no allocation until
capacity runs out; every growth is counted in :attr:`TraceSink.grows`.
"""

from __future__ import annotations

import json
import threading
import time
from array import array

clock_ns = time.perf_counter_ns

CHECKPOINT_NAMES = {
    1: "before bus->someip conversion",
    2: "after bus->someip conversion",
    3: "after someip receive",
    4: "after someip->bus conversion",
}


class TraceSink:
    def __init__(self, capacity: int = 4096):
        self.capacity = capacity
        self.count = 0
        self.grows = 0
        self._routes: list = []
        self._route_ids: dict = {}
        self._route = array("h", bytes(2 * capacity))
        self._checkpoint = array("b", bytes(capacity))
        self._key = array("q", bytes(8 * capacity))
        self._t = array("q", bytes(8 * capacity))
        self._size = array("q", bytes(8 * capacity))
        self._lock = threading.Lock()

    def route_id(self, name: str) -> int:
        """Register a route name once, outside the hot path."""
        with self._lock:
            rid = self._route_ids.get(name)
            if rid is None:
                rid = self._route_ids[name] = len(self._routes)
                self._routes.append(name)
            return rid

    def _grow(self) -> None:
        self.grows += 1
        extra = self.capacity
        self._route.extend(array("h", bytes(2 * extra)))
        self._checkpoint.extend(array("b", bytes(extra)))
        self._key.extend(array("q", bytes(8 * extra)))
        self._t.extend(array("q", bytes(8 * extra)))
        self._size.extend(array("q", bytes(8 * extra)))
        self.capacity += extra

    def mark(self, route: int, checkpoint: int, key: int, t_ns: int, size: int) -> None:
        with self._lock:
            i = self.count
            if i >= self.capacity:
                self._grow()
            self._route[i] = route
            self._checkpoint[i] = checkpoint
            self._key[i] = key
            self._t[i] = t_ns
            self._size[i] = size
            self.count = i + 1

    def records(self) -> list:
        with self._lock:
            return [
                {"route": self._routes[self._route[i]], "checkpoint": self._checkpoint[i],
                 "key": self._key[i], "t_ns": self._t[i], "size": self._size[i]}
                for i in range(self.count)
            ]

    def clear(self) -> None:
        with self._lock:
            self.count = 0

    def write_ndjson(self, fp) -> int:
        n = 0
        for rec in self.records():
            fp.write(json.dumps(rec, sort_keys=True) + "\n")
            n += 1
        return n
