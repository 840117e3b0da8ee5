"""Simulated spinning lidar."""

from __future__ import annotations

import numpy as np

from lidarsr.geometry import Pose, RangeImage, SensorIntrinsics, beam_directions
from lidarsr.sim.scene import Scene


def raycast_scan(scene: Scene, pose: Pose, intr: SensorIntrinsics) -> RangeImage:
    """Range image seen by a sensor at ``pose``.

    Pixels whose nearest surface lies outside [min_range, max_range] are 0.
    """
    dirs = beam_directions(intr) @ pose.rotation().T
    t = scene.intersect(np.asarray(pose.position), dirs)
    valid = (t >= intr.min_range_m) & (t <= intr.max_range_m)
    data = np.where(valid, t, 0.0).astype(np.float32)
    # float32 rounding can nudge a boundary value just outside the interval
    data[valid] = np.clip(data[valid], np.float32(intr.min_range_m), np.float32(intr.max_range_m))
    return RangeImage(intr, data)
