"""Procedural primitive worlds used for training and the fixed evaluation scenes.

Training worlds are random streets and rooms. The evaluation office and the
evaluation town are built from layouts the random generators never produce.
"""

from __future__ import annotations

import math

import numpy as np

from lidarsr.geometry import Pose
from lidarsr.sim.scene import Box, Cylinder, GroundPlane, Scene, Sphere, Trajectory


def _wall(x0, y0, x1, y1, height, thick=0.1, z0=0.0):
    lo = [min(x0, x1) - thick / 2, min(y0, y1) - thick / 2, z0]
    hi = [max(x0, x1) + thick / 2, max(y0, y1) + thick / 2, z0 + height]
    return Box(lo, hi)


def _desk(cx, cy, w, d, h=0.75, top=0.04, leg=0.05):
    prims = [Box([cx - w / 2, cy - d / 2, h - top], [cx + w / 2, cy + d / 2, h])]
    for sx in (-1, 1):
        for sy in (-1, 1):
            x = cx + sx * (w / 2 - leg)
            y = cy + sy * (d / 2 - leg)
            prims.append(Box([x - leg / 2, y - leg / 2, 0.0], [x + leg / 2, y + leg / 2, h - top]))
    return prims


def _tree(x, y, trunk_h, crown_r, trunk_r=0.15):
    return [
        Cylinder([x, y], trunk_r, 0.0, trunk_h),
        Sphere([x, y, trunk_h + crown_r * 0.8], crown_r),
    ]


def random_town(rng: np.random.Generator, length: float = 80.0):
    """A straight street with buildings, parked cars, poles and trees.

    Returns the scene and the street's centerline y coordinate (0).
    """
    prims = [GroundPlane(0.0)]
    for side in (-1, 1):
        x = -length / 2
        setback = rng.uniform(6.0, 12.0)
        while x < length / 2:
            w = rng.uniform(5.0, 18.0)
            if rng.random() < 0.85:
                depth = rng.uniform(6.0, 15.0)
                h = rng.uniform(3.0, 25.0)
                y_in = side * (setback + rng.uniform(-1.0, 1.0))
                y_out = y_in + side * depth
                prims.append(Box([x, min(y_in, y_out), 0.0], [x + w, max(y_in, y_out), h]))
            x += w + rng.uniform(0.5, 6.0)
        for _ in range(rng.integers(2, 7)):
            cx = rng.uniform(-length / 2, length / 2)
            cy = side * rng.uniform(2.8, 4.0)
            clen, cw, ch = rng.uniform(3.8, 5.0), rng.uniform(1.7, 2.0), rng.uniform(1.3, 1.9)
            prims.append(Box([cx, cy - cw / 2, 0.15], [cx + clen, cy + cw / 2, ch]))
        for _ in range(rng.integers(2, 8)):
            px = rng.uniform(-length / 2, length / 2)
            py = side * rng.uniform(4.5, 5.8)
            if rng.random() < 0.5:
                prims.append(Cylinder([px, py], rng.uniform(0.08, 0.25), 0.0, rng.uniform(3.0, 8.0)))
            else:
                prims += _tree(px, py, rng.uniform(1.5, 3.5), rng.uniform(1.0, 2.5))
    if rng.random() < 0.4:
        # overpass
        x0 = rng.uniform(-length / 4, length / 4)
        z0 = rng.uniform(4.5, 7.0)
        prims.append(Box([x0, -40.0, z0], [x0 + rng.uniform(6, 12), 40.0, z0 + 1.0]))
    for _ in range(rng.integers(0, 4)):
        sx = rng.uniform(-length / 2, length / 2)
        prims.append(Sphere([sx, rng.choice([-1, 1]) * rng.uniform(4.5, 6.0), 0.4], rng.uniform(0.3, 0.8)))
    return Scene(prims)


def random_room(rng: np.random.Generator):
    """A walled room with furniture-like boxes and pillars, clear around its center ring."""
    sx, sy = rng.uniform(6.0, 16.0), rng.uniform(6.0, 14.0)
    height = rng.uniform(2.2, 4.0)
    prims = [GroundPlane(0.0)]
    prims += [
        _wall(-sx / 2, -sy / 2, sx / 2, -sy / 2, height),
        _wall(-sx / 2, sy / 2, sx / 2, sy / 2, height),
        _wall(-sx / 2, -sy / 2, -sx / 2, sy / 2, height),
        _wall(sx / 2, -sy / 2, sx / 2, sy / 2, height),
    ]
    if rng.random() < 0.3:
        prims.append(Box([-sx / 2, -sy / 2, height], [sx / 2, sy / 2, height + 0.1]))

    def clear(x, y, r):
        # keep the sensor path (|x|,|y| small) free
        return abs(x) > 1.6 + r or abs(y) > 1.6 + r

    for _ in range(rng.integers(3, 12)):
        w, d, h = rng.uniform(0.3, 2.0), rng.uniform(0.3, 1.5), rng.uniform(0.2, 1.6)
        x, y = rng.uniform(-sx / 2 + 0.3, sx / 2 - 0.3), rng.uniform(-sy / 2 + 0.3, sy / 2 - 0.3)
        if clear(x, y, max(w, d) / 2):
            prims.append(Box([x - w / 2, y - d / 2, 0.0], [x + w / 2, y + d / 2, h]))
    for _ in range(rng.integers(0, 4)):
        w, d = rng.uniform(0.8, 1.8), rng.uniform(0.5, 0.9)
        x, y = rng.uniform(-sx / 2 + 1, sx / 2 - 1), rng.uniform(-sy / 2 + 1, sy / 2 - 1)
        if clear(x, y, max(w, d) / 2):
            prims += _desk(x, y, w, d, h=rng.uniform(0.65, 0.8))
    for _ in range(rng.integers(0, 3)):
        x, y = rng.uniform(-sx / 2 + 0.5, sx / 2 - 0.5), rng.uniform(-sy / 2 + 0.5, sy / 2 - 0.5)
        r = rng.uniform(0.1, 0.4)
        if clear(x, y, r):
            prims.append(Cylinder([x, y], r, 0.0, height))
    for _ in range(rng.integers(0, 3)):
        x, y = rng.uniform(-sx / 2 + 0.5, sx / 2 - 0.5), rng.uniform(-sy / 2 + 0.5, sy / 2 - 0.5)
        r = rng.uniform(0.15, 0.5)
        if clear(x, y, r):
            prims.append(Sphere([x, y, r], r))
    return Scene(prims)


def random_world(rng: np.random.Generator, n_poses: int):
    """Random training world and a trajectory through it.

    Rooms use low mounting heights and towns vehicle-like ones; both vary.
    """
    if rng.random() < 0.5:
        scene = random_town(rng)
        xs = rng.uniform(-30.0, 30.0, n_poses)
        ys = rng.uniform(-1.5, 1.5, n_poses)
        zs = rng.uniform(1.2, 2.2, n_poses)
    else:
        scene = random_room(rng)
        xs = rng.uniform(-1.4, 1.4, n_poses)
        ys = rng.uniform(-1.4, 1.4, n_poses)
        zs = rng.uniform(0.3, 1.2, n_poses)
    yaws = rng.uniform(-math.pi, math.pi, n_poses)
    poses = [Pose((x, y, z), yaw=a) for x, y, z, a in zip(xs, ys, zs, yaws)]
    return scene, Trajectory(poses)


def office_scene() -> Scene:
    """Fixed office-like evaluation room, 12 m x 10 m, populated with desks and boxes."""
    h = 2.6
    prims = [
        GroundPlane(0.0),
        _wall(-6, -5, 6, -5, h),
        _wall(-6, 5, 6, 5, h),
        _wall(-6, -5, -6, 5, h),
        _wall(6, -5, 6, 5, h),
        # partition with a doorway
        _wall(2.0, 5.0, 2.0, 2.2, h),
        _wall(2.0, 0.9, 2.0, -1.2, h),
    ]
    for cx, cy, w, d in [(-4.0, 3.4, 1.6, 0.8), (-1.5, 3.6, 1.4, 0.7), (4.2, 3.8, 1.6, 0.8),
                         (-4.3, -3.6, 1.2, 0.7), (4.0, -3.5, 1.8, 0.9), (0.8, -3.9, 1.4, 0.7)]:
        prims += _desk(cx, cy, w, d)
    for lo, hi in [
        ([-5.8, -0.6, 0.0], [-5.0, 0.6, 1.9]),  # cabinet
        ([-3.0, 1.6, 0.0], [-2.4, 2.2, 0.5]),
        ([3.5, 0.8, 0.0], [4.3, 1.5, 0.9]),
        ([-2.2, -3.0, 0.0], [-1.5, -2.2, 0.6]),
        ([2.6, -2.6, 0.0], [3.1, -2.1, 0.35]),
        ([5.0, -0.5, 0.0], [5.8, 0.3, 1.2]),
        ([-0.4, 4.2, 0.0], [0.4, 4.9, 1.1]),
    ]:
        prims.append(Box(lo, hi))
    prims.append(Cylinder([0.0, 0.0], 0.25, 0.0, h))
    prims.append(Cylinder([-3.6, 0.2], 0.2, 0.0, 1.1))
    prims.append(Sphere([3.2, 2.5, 0.3], 0.3))
    return Scene(prims)


def office_trajectory(n: int = 25, height: float = 0.5) -> Trajectory:
    """Loop around the central pillar."""
    poses = []
    for k in range(n):
        a = 2 * math.pi * k / n
        x, y = 2.3 * math.cos(a) - 0.8, 1.7 * math.sin(a)
        poses.append(Pose((x, y, height), yaw=a + math.pi / 2))
    return Trajectory(poses, spacing_m=2 * math.pi * 2.0 / n)


def eval_town() -> Scene:
    """Fixed suburban street for held-out evaluation."""
    rng = np.random.default_rng(2024_11_01)
    prims = [GroundPlane(0.0)]
    for side in (-1, 1):
        for i, x in enumerate(np.arange(-50.0, 50.0, 11.0)):
            h = 4.0 + 3.0 * ((i * 7 + (side > 0) * 3) % 4)
            y0 = side * (9.0 + (i % 3))
            prims.append(Box([x, min(y0, y0 + side * 9), 0.0], [x + 8.0, max(y0, y0 + side * 9), h]))
            prims += _tree(x + 9.5, side * 5.5, 2.5, 1.6)
        for x in np.arange(-45.0, 50.0, 17.0):
            prims.append(Box([x, side * 3.5 - 0.9, 0.15], [x + 4.4, side * 3.5 + 0.9, 1.6]))
            prims.append(Cylinder([x + 8.0, side * 4.8], 0.12, 0.0, 6.0))
    for _ in range(6):
        prims.append(Sphere([rng.uniform(-40, 40), rng.choice([-1, 1]) * 6.5, 0.5], 0.5))
    return Scene(prims)


def eval_town_trajectory(n: int = 25, height: float = 1.8) -> Trajectory:
    xs = np.linspace(-36.0, 36.0, n)
    return Trajectory([Pose((float(x), 0.0, height), yaw=0.0) for x in xs], spacing_m=72.0 / (n - 1))
