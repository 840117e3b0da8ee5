"""Primitive scenes and analytic ray intersection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lidarsr.geometry import Pose


class SceneFormatError(ValueError):
    pass


def _vec(v, n, what):
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} must be {n} finite numbers, got {v!r}")
    return arr


@dataclass(frozen=True, eq=False)
class GroundPlane:
    z: float = 0.0

    def intersect(self, o, d):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.z - o[2]) / d[..., 2]
        return np.where(np.isfinite(t) & (t > 0), t, np.inf)

    def to_dict(self):
        return {"type": "plane", "z": self.z}


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lo, 3, "box min"), _vec(self.hi, 3, "box max")
        if np.any(hi <= lo):
            raise ValueError(f"box extents must be positive, got min {lo} max {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def intersect(self, o, d):
        # slab method; the entry distance if the origin is outside, else the exit
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (self.lo - o) * inv
            t2 = (self.hi - o) * inv
        # 0 * inf on axis-parallel rays: inside that slab means unconstrained
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        tnear = np.minimum(t1, t2).max(axis=-1)
        tfar = np.maximum(t1, t2).min(axis=-1)
        hit = (tnear <= tfar) & (tfar > 0)
        t = np.where(tnear > 0, tnear, tfar)
        return np.where(hit, t, np.inf)

    def to_dict(self):
        return {"type": "box", "min": self.lo.tolist(), "max": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, 3, "sphere center"))
        if not self.radius > 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")

    def intersect(self, o, d):
        oc = o - self.center
        b = d @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0, t1 = -b - sq, -b + sq
        t = np.where(t0 > 0, t0, t1)
        return np.where((disc >= 0) & (t > 0), t, np.inf)

    def to_dict(self):
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Cylinder:
    """Closed vertical cylinder."""

    center: np.ndarray
    radius: float
    z_min: float
    z_max: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, 2, "cylinder center"))
        if not self.radius > 0:
            raise ValueError(f"cylinder radius must be positive, got {self.radius}")
        if not self.z_max > self.z_min:
            raise ValueError(f"cylinder z extent must be positive, got {self.z_min}..{self.z_max}")

    def intersect(self, o, d):
        ox, oy = o[0] - self.center[0], o[1] - self.center[1]
        dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
        a = dx * dx + dy * dy
        b = ox * dx + oy * dy
        c = ox * ox + oy * oy - self.radius**2
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = b * b - a * c
            sq = np.sqrt(np.maximum(disc, 0.0))
            best = np.full(dz.shape, np.inf)
            for t in ((-b - sq) / a, (-b + sq) / a):
                z = o[2] + t * dz
                ok = (disc >= 0) & (a > 0) & (t > 0) & (z >= self.z_min) & (z <= self.z_max)
                best = np.where(ok & (t < best), t, best)
            for zc in (self.z_min, self.z_max):
                t = (zc - o[2]) / dz
                px, py = ox + t * dx, oy + t * dy
                ok = np.isfinite(t) & (t > 0) & (px * px + py * py <= self.radius**2)
                best = np.where(ok & (t < best), t, best)
        return best

    def to_dict(self):
        return {
            "type": "cylinder",
            "center": self.center.tolist(),
            "radius": self.radius,
            "z": [self.z_min, self.z_max],
        }


Primitive = GroundPlane | Box | Sphere | Cylinder


@dataclass(frozen=True, eq=False)
class Scene:
    primitives: tuple

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def intersect(self, origin, dirs) -> np.ndarray:
        """Distance to the nearest surface along each ray (inf on a miss)."""
        o = np.asarray(origin, np.float64)
        d = np.asarray(dirs, np.float64)
        best = np.full(d.shape[:-1], np.inf)
        for prim in self.primitives:
            np.minimum(best, prim.intersect(o, d), out=best)
        return best

    def to_list(self) -> list:
        return [p.to_dict() for p in self.primitives]


def primitive_from_dict(rec: dict):
    kind = rec.get("type")
    if kind == "plane":
        return GroundPlane(float(rec.get("z", 0.0)))
    if kind == "box":
        return Box(rec["min"], rec["max"])
    if kind == "sphere":
        return Sphere(rec["center"], float(rec["radius"]))
    if kind == "cylinder":
        z = rec["z"]
        return Cylinder(rec["center"], float(rec["radius"]), float(z[0]), float(z[1]))
    raise ValueError(f"unknown primitive type {kind!r}")


def scene_from_list(records: list) -> Scene:
    if not isinstance(records, list):
        raise SceneFormatError("scene must be a JSON list of primitive records")
    prims = []
    for i, rec in enumerate(records):
        try:
            prims.append(primitive_from_dict(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneFormatError(f"primitive #{i}: {exc!s} (record: {rec!r})") from exc
    return Scene(prims)


def load_scene(path) -> Scene:
    text = Path(path).read_text()
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return scene_from_list(records)
    except SceneFormatError as exc:
        raise SceneFormatError(f"{path}: {exc}") from exc


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene.to_list(), indent=1))


@dataclass(frozen=True)
class Trajectory:
    poses: tuple
    spacing_m: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("trajectory must contain at least one pose")

    def __len__(self):
        return len(self.poses)

    def to_list(self) -> list:
        return [p.to_dict() for p in self.poses]


def load_trajectory(path) -> Trajectory:
    text = Path(path).read_text()
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(records, list) or not records:
        raise SceneFormatError(f"{path}: trajectory must be a non-empty JSON list")
    poses = []
    for i, rec in enumerate(records):
        try:
            poses.append(Pose.from_dict(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneFormatError(f"{path}: pose #{i}: {exc!s}") from exc
    spacing = 0.0
    if len(poses) > 1:
        pos = np.array([p.position for p in poses])
        spacing = float(np.linalg.norm(np.diff(pos, axis=0), axis=1).mean())
    return Trajectory(poses, spacing)


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(json.dumps(traj.to_list(), indent=1))


def yaw_toward(src, dst) -> float:
    return math.atan2(dst[1] - src[1], dst[0] - src[0])
