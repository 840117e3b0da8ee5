"""Sensor model, range images, point clouds and the spherical projection between them."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SensorIntrinsics:
    """A spinning lidar with uniformly spaced beams.

    Row 0 is the highest beam. Angles are in degrees, ranges in meters.
    """

    channels: int
    h_res: int = 1024
    v_fov_deg: float = 30.0
    v_center_deg: float = 0.0
    max_range_m: float = 100.0
    min_range_m: float = 0.3

    def __post_init__(self):
        if self.channels < 2:
            raise ValueError(f"channels must be >= 2, got {self.channels}")
        if self.h_res < 4:
            raise ValueError(f"h_res must be >= 4, got {self.h_res}")
        if not 0.0 < self.v_fov_deg < 180.0:
            raise ValueError(f"v_fov_deg must be in (0, 180), got {self.v_fov_deg}")
        if not self.max_range_m > self.min_range_m > 0.0:
            raise ValueError(
                f"need max_range_m > min_range_m > 0, got {self.max_range_m}, {self.min_range_m}"
            )

    @property
    def spacing_deg(self) -> float:
        return self.v_fov_deg / (self.channels - 1)

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "h_res": self.h_res,
            "v_fov_deg": self.v_fov_deg,
            "v_center_deg": self.v_center_deg,
            "max_range_m": self.max_range_m,
            "min_range_m": self.min_range_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorIntrinsics":
        return cls(
            channels=int(d["channels"]),
            h_res=int(d.get("h_res", 1024)),
            v_fov_deg=float(d.get("v_fov_deg", 30.0)),
            v_center_deg=float(d.get("v_center_deg", 0.0)),
            max_range_m=float(d.get("max_range_m", 100.0)),
            min_range_m=float(d.get("min_range_m", 0.3)),
        )


def sanitize_ranges(data, intr: SensorIntrinsics) -> np.ndarray:
    """Coerce an arbitrary float array into valid range-image values.

    NaN/Inf and anything below the minimum range become 0, values above the
    maximum range are clamped to it.
    """
    out = np.nan_to_num(np.asarray(data, dtype=np.float32), nan=0.0, posinf=0.0, neginf=0.0)
    out = np.minimum(out, np.float32(intr.max_range_m))
    out[out < np.float32(intr.min_range_m)] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class RangeImage:
    intrinsics: SensorIntrinsics
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        intr = self.intrinsics
        if data.shape != (intr.channels, intr.h_res):
            raise ValueError(
                f"range image shape {data.shape} does not match intrinsics "
                f"({intr.channels}, {intr.h_res})"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("range image contains NaN or Inf")
        valid = data != 0
        vals = data[valid]
        if vals.size and (
            vals.min() < np.float32(intr.min_range_m) or vals.max() > np.float32(intr.max_range_m)
        ):
            raise ValueError(
                f"ranges must be 0 or within [{intr.min_range_m}, {intr.max_range_m}], "
                f"got [{vals.min()}, {vals.max()}]"
            )
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, RangeImage):
            return NotImplemented
        return self.intrinsics == other.intrinsics and np.array_equal(self.data, other.data)

    @classmethod
    def zeros(cls, intr: SensorIntrinsics) -> "RangeImage":
        return cls(intr, np.zeros((intr.channels, intr.h_res), np.float32))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    ring: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        ring = np.asarray(self.ring, dtype=np.int64).reshape(-1)
        if len(pts) != len(ring):
            raise ValueError(f"{len(pts)} points but {len(ring)} ring indices")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ring", ring)

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, np.int64))


@dataclass(frozen=True)
class Pose:
    """Sensor pose in the world frame; rotation is applied yaw, then pitch, then roll."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
            raise ValueError(f"position must be 3 finite values, got {self.position}")
        for name in ("yaw", "pitch", "roll"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "position", pos)

    def rotation(self) -> np.ndarray:
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cr, sr = math.cos(self.roll), math.sin(self.roll)
        rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
        return rz @ ry @ rx

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, np.float64) @ self.rotation().T + np.asarray(self.position)

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "yaw_deg": math.degrees(self.yaw),
            "pitch_deg": math.degrees(self.pitch),
            "roll_deg": math.degrees(self.roll),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(
            position=tuple(d["position"]),
            yaw=math.radians(float(d.get("yaw_deg", 0.0))),
            pitch=math.radians(float(d.get("pitch_deg", 0.0))),
            roll=math.radians(float(d.get("roll_deg", 0.0))),
        )


def beam_elevations(intr: SensorIntrinsics) -> np.ndarray:
    """Elevation of every beam in radians, row 0 first (highest)."""
    top = intr.v_center_deg + intr.v_fov_deg / 2.0
    deg = top - intr.spacing_deg * np.arange(intr.channels, dtype=np.float64)
    return np.radians(deg)


def column_azimuths(intr: SensorIntrinsics) -> np.ndarray:
    """Azimuth of each column center; column 0 starts at the rear seam (-pi)."""
    return (np.arange(intr.h_res, dtype=np.float64) + 0.5) / intr.h_res * 2.0 * np.pi - np.pi


def beam_directions(intr: SensorIntrinsics) -> np.ndarray:
    """Unit ray direction for every pixel, shape (channels, h_res, 3), sensor frame."""
    phi = beam_elevations(intr)[:, None]
    theta = column_azimuths(intr)[None, :]
    cphi = np.cos(phi)
    return np.stack(
        np.broadcast_arrays(cphi * np.cos(theta), cphi * np.sin(theta), np.sin(phi)), axis=-1
    )


def project(cloud: PointCloud, intr: SensorIntrinsics, return_dropped: bool = False):
    """Bin a sensor-frame point cloud into a range image.

    Points off every beam by more than half a beam spacing, or outside the
    valid range interval, are dropped. Colliding points keep the closest.
    """
    pts = cloud.points
    img = np.zeros((intr.channels, intr.h_res), np.float32)
    if len(pts) == 0:
        return (RangeImage(intr, img), 0) if return_dropped else RangeImage(intr, img)

    r64 = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    r = r64.astype(np.float32)
    keep = (r >= np.float32(intr.min_range_m)) & (r <= np.float32(intr.max_range_m))

    safe_r = np.where(r64 > 0, r64, 1.0)
    elev = np.arcsin(np.clip(pts[:, 2] / safe_r, -1.0, 1.0))
    spacing = math.radians(intr.spacing_deg)
    top = math.radians(intr.v_center_deg + intr.v_fov_deg / 2.0)
    row_f = (top - elev) / spacing
    row = np.rint(row_f).astype(np.int64)
    # 1e-9 absorbs trig round-off for points placed exactly half-way
    keep &= (row >= 0) & (row < intr.channels) & (np.abs(row_f - row) <= 0.5 + 1e-9)

    az = np.arctan2(pts[:, 1], pts[:, 0])
    col = np.floor((az + np.pi) / (2.0 * np.pi) * intr.h_res).astype(np.int64) % intr.h_res

    row, col, r = row[keep], col[keep], r[keep]
    dropped = int(len(pts) - keep.sum())
    if dropped:
        log.debug("project: dropped %d of %d points", dropped, len(pts))

    # write farthest first so the closest return wins on collisions
    order = np.argsort(-r, kind="stable")
    img[row[order], col[order]] = r[order]
    out = RangeImage(intr, img)
    return (out, dropped) if return_dropped else out


def unproject(img: RangeImage) -> PointCloud:
    """One point per non-zero pixel, placed on the beam at the column center."""
    intr = img.intrinsics
    rows, cols = np.nonzero(img.data)
    if len(rows) == 0:
        return PointCloud.empty()
    r = img.data[rows, cols].astype(np.float64)
    phi = beam_elevations(intr)[rows]
    theta = column_azimuths(intr)[cols]
    pts = np.stack(
        [r * np.cos(phi) * np.cos(theta), r * np.cos(phi) * np.sin(theta), r * np.sin(phi)],
        axis=1,
    )
    return PointCloud(pts, rows)


def normalize(img: RangeImage) -> np.ndarray:
    """Ranges divided by the maximum range; 0 stays 0."""
    return (img.data / np.float32(img.intrinsics.max_range_m)).astype(np.float32)


def denormalize(norm, intr: SensorIntrinsics) -> RangeImage:
    """Inverse of :func:`normalize`. Out-of-interval predictions are sanitized."""
    data = np.asarray(norm, np.float32) * np.float32(intr.max_range_m)
    return RangeImage(intr, sanitize_ranges(data, intr))


def subsample_intrinsics(intr: SensorIntrinsics, factor: int) -> SensorIntrinsics:
    """Intrinsics of the beams kept by ``subsample_rows`` (rows 0, f, 2f, ...)."""
    if factor < 1 or intr.channels % factor:
        raise ValueError(f"factor {factor} does not divide {intr.channels} rows")
    if factor == 1:
        return intr
    kept = intr.channels // factor
    top = intr.v_center_deg + intr.v_fov_deg / 2.0
    span = intr.spacing_deg * factor * (kept - 1)
    return replace(
        intr, channels=kept, v_fov_deg=round(span, 10), v_center_deg=round(top - span / 2.0, 10)
    )


def upsample_intrinsics(intr: SensorIntrinsics, factor: int) -> SensorIntrinsics:
    """Inverse of :func:`subsample_intrinsics`: the dense sensor whose every
    ``factor``-th beam, starting at the top, is a beam of ``intr``."""
    if factor == 1:
        return intr
    channels = intr.channels * factor
    top = intr.v_center_deg + intr.v_fov_deg / 2.0
    spacing = intr.spacing_deg / factor
    fov = spacing * (channels - 1)
    return replace(
        intr, channels=channels, v_fov_deg=round(fov, 10), v_center_deg=round(top - fov / 2.0, 10)
    )


def subsample_rows(img: RangeImage, factor: int) -> RangeImage:
    intr = subsample_intrinsics(img.intrinsics, factor)
    return RangeImage(intr, img.data[::factor])
