"""Synthetic point clouds: x, y, z, intensity as float32, 16 bytes per point."""

from __future__ import annotations

import random

POINT_STEP = 16
POINTCLOUD_TYPE = "sensor_msgs/PointCloud2"
DEFAULT_SIZES = (100, 1_000, 5_000, 10_000, 50_000, 100_000, 500_000)

_FLOAT32 = 7


def make_pointcloud(points: int, seed: int = 0, frame_id: str = "lidar") -> dict:
    rng = random.Random(seed)
    fields = [{"name": n, "offset": 4 * i, "datatype": _FLOAT32, "count": 1}
              for i, n in enumerate(("x", "y", "z", "intensity"))]
    return {
        "header": {"stamp": {"sec": seed, "nanosec": 0}, "frame_id": frame_id},
        "height": 1,
        "width": points,
        "fields": fields,
        "is_bigendian": False,
        "point_step": POINT_STEP,
        "row_step": POINT_STEP * points,
        "data": rng.randbytes(POINT_STEP * points),
        "is_dense": True,
    }
