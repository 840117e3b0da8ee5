"""Dense log-odds occupancy grid with exact ray traversal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from lidarsr.geometry import PointCloud, Pose, RangeImage, unproject

FREE, UNKNOWN, OCCUPIED = 0, 1, 2


@dataclass(frozen=True)
class OccupancyParams:
    l_hit: float = math.log(0.7 / 0.3)
    l_miss: float = math.log(0.4 / 0.6)
    l_min: float = -2.0
    l_max: float = 3.5
    # half-width of the "unknown" band around p = 0.5 when reading states
    delta: float = 0.02

    def __post_init__(self):
        if not self.l_hit > 0 > self.l_miss:
            raise ValueError("need l_hit > 0 > l_miss")
        if not self.l_min < 0 < self.l_max:
            raise ValueError("need l_min < 0 < l_max")


@dataclass(frozen=True)
class GridConfig:
    origin: tuple[float, float, float]
    resolution: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if self.resolution <= 0 or min(self.dims) < 1:
            raise ValueError(f"invalid grid config {self}")

    @classmethod
    def covering(cls, lo, hi, resolution: float) -> "GridConfig":
        lo = np.asarray(lo, np.float64)
        dims = np.ceil((np.asarray(hi, np.float64) - lo) / resolution - 1e-9).astype(int)
        return cls(tuple(lo), resolution, tuple(np.maximum(dims, 1)))

    def to_dict(self):
        return {"origin": list(self.origin), "resolution": self.resolution, "dims": list(self.dims)}


@numba.njit(cache=True)
def _clip_segment(p0, p1, lo, hi):
    """Parametric [t0, t1] of the part of p0->p1 inside the box; t0 > t1 if none."""
    t0, t1 = 0.0, 1.0
    for a in range(3):
        d = p1[a] - p0[a]
        if d == 0.0:
            if p0[a] < lo[a] or p0[a] > hi[a]:
                return 1.0, 0.0
        else:
            ta = (lo[a] - p0[a]) / d
            tb = (hi[a] - p0[a]) / d
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
    return t0, t1


@numba.njit(cache=True)
def _voxel_of(p, origin, res, dims, out):
    for a in range(3):
        v = int(math.floor((p[a] - origin[a]) / res))
        out[a] = min(max(v, 0), dims[a] - 1)


@numba.njit(cache=True)
def _walk(q0, q1, origin, res, dims, out, n_out):
    """Append every voxel the segment q0->q1 passes through to ``out``.

    Incremental t-max/t-delta stepping; exactly sum|end - start| steps are
    taken, never past the end voxel on any axis.
    """
    cur = np.empty(3, np.int64)
    end = np.empty(3, np.int64)
    _voxel_of(q0, origin, res, dims, cur)
    _voxel_of(q1, origin, res, dims, end)
    step = np.zeros(3, np.int64)
    tmax = np.full(3, np.inf)
    tdelta = np.full(3, np.inf)
    nsteps = 0
    for a in range(3):
        d = q1[a] - q0[a]
        nsteps += abs(end[a] - cur[a])
        if d > 0:
            step[a] = 1
            tmax[a] = ((cur[a] + 1) * res + origin[a] - q0[a]) / d
            tdelta[a] = res / d
        elif d < 0:
            step[a] = -1
            tmax[a] = (cur[a] * res + origin[a] - q0[a]) / d
            tdelta[a] = -res / d
    out[n_out, 0] = cur[0]
    out[n_out, 1] = cur[1]
    out[n_out, 2] = cur[2]
    n_out += 1
    for _ in range(nsteps):
        best = -1
        for a in range(3):
            if cur[a] != end[a] and (best < 0 or tmax[a] < tmax[best]):
                best = a
        cur[best] += step[best]
        tmax[best] += tdelta[best]
        out[n_out, 0] = cur[0]
        out[n_out, 1] = cur[1]
        out[n_out, 2] = cur[2]
        n_out += 1
    return n_out


@numba.njit(cache=True)
def _traverse(p0, p1, origin, res, dims):
    lo = origin.copy()
    hi = origin + dims * res
    t0, t1 = _clip_segment(p0, p1, lo, hi)
    cap = int(dims[0] + dims[1] + dims[2]) + 3
    out = np.empty((cap, 3), np.int64)
    if t0 > t1:
        return out[:0]
    d = p1 - p0
    q0 = p0 if t0 <= 0.0 else p0 + t0 * d
    q1 = p1 if t1 >= 1.0 else p0 + t1 * d
    n = _walk(q0, q1, origin, res, dims, out, 0)
    return out[:n]


@numba.njit(cache=True)
def _integrate(log_odds, touched, hit_stamp, free_stamp, stamp, sensor, ends, is_hit,
               origin, res, dims, l_hit, l_miss, l_min, l_max):
    nx, ny, nz = dims[0], dims[1], dims[2]
    lo = origin.copy()
    hi = origin + dims * res
    v = np.empty(3, np.int64)
    hits = np.empty(len(ends), np.int64)
    n_hits = 0
    # occupied first so a later pass-through in the same scan cannot clear it
    for i in range(len(ends)):
        if not is_hit[i]:
            continue
        inside = True
        for a in range(3):
            f = math.floor((ends[i, a] - origin[a]) / res)
            if f < 0 or f >= dims[a]:
                inside = False
            v[a] = int(f) if inside else 0
        if not inside:
            is_hit[i] = False
            continue
        flat = (v[0] * ny + v[1]) * nz + v[2]
        if hit_stamp[flat] != stamp:
            hit_stamp[flat] = stamp
            hits[n_hits] = flat
            n_hits += 1
    cap = int(nx + ny + nz) + 3
    buf = np.empty((cap, 3), np.int64)
    frees = np.empty(16, np.int64)
    n_free = 0
    for i in range(len(ends)):
        p1 = ends[i]
        t0, t1 = _clip_segment(sensor, p1, lo, hi)
        if t0 > t1:
            continue
        d = p1 - sensor
        q0 = sensor if t0 <= 0.0 else sensor + t0 * d
        q1 = p1 if t1 >= 1.0 else sensor + t1 * d
        n = _walk(q0, q1, origin, res, dims, buf, 0)
        if is_hit[i]:
            n -= 1  # the endpoint voxel is the hit
        for k in range(n):
            flat = (buf[k, 0] * ny + buf[k, 1]) * nz + buf[k, 2]
            if hit_stamp[flat] == stamp or free_stamp[flat] == stamp:
                continue
            free_stamp[flat] = stamp
            if n_free == len(frees):
                grown = np.empty(2 * len(frees), np.int64)
                grown[:n_free] = frees[:n_free]
                frees = grown
            frees[n_free] = flat
            n_free += 1
    for k in range(n_hits):
        f = hits[k]
        log_odds[f] = min(max(log_odds[f] + l_hit, l_min), l_max)
        touched[f] = True
    for k in range(n_free):
        f = frees[k]
        log_odds[f] = min(max(log_odds[f] + l_miss, l_min), l_max)
        touched[f] = True


def traverse_segment(p0, p1, origin, resolution, dims) -> np.ndarray:
    """Voxel indices (K, 3) crossed by the segment, in order, clipped to the grid."""
    return _traverse(
        np.asarray(p0, np.float64), np.asarray(p1, np.float64),
        np.asarray(origin, np.float64), float(resolution), np.asarray(dims, np.int64),
    )


@dataclass(eq=False)
class VoxelGrid:
    config: GridConfig
    params: OccupancyParams = field(default_factory=OccupancyParams)
    log_odds: np.ndarray = None
    touched: np.ndarray = None

    def __post_init__(self):
        n = int(np.prod(self.config.dims))
        if self.log_odds is None:
            self.log_odds = np.zeros(n, np.float32)
        if self.touched is None:
            self.touched = np.zeros(n, bool)
        self.log_odds = np.asarray(self.log_odds, np.float32).reshape(-1)
        self.touched = np.asarray(self.touched, bool).reshape(-1)
        if self.log_odds.size != n or self.touched.size != n:
            raise ValueError("grid arrays do not match dims")
        self._hit_stamp = np.zeros(n, np.int64)
        self._free_stamp = np.zeros(n, np.int64)
        self._stamp = 0

    @property
    def dims(self):
        return self.config.dims

    def flat_index(self, idx) -> int:
        ix, iy, iz = (int(v) for v in idx)
        nx, ny, nz = self.dims
        if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
            raise IndexError(f"voxel {idx} outside grid {self.dims}")
        return (ix * ny + iy) * nz + iz

    def integrate_scan(self, cloud: PointCloud, pose: Pose, max_range: float = math.inf) -> None:
        """Add one registered scan: a hit at each endpoint, misses along each ray.

        Within a scan every voxel is updated at most once, and a hit beats a
        miss. Endpoints beyond ``max_range`` are truncated to it without a hit.
        """
        if len(cloud) == 0:
            return
        pts = cloud.points
        r = np.linalg.norm(pts, axis=1)
        is_hit = r <= max_range
        if not np.all(is_hit):
            pts = np.where(is_hit[:, None], pts, pts * (max_range / np.maximum(r, 1e-12))[:, None])
        ends = pose.to_world(pts)
        self._stamp += 1
        p = self.params
        _integrate(
            self.log_odds, self.touched, self._hit_stamp, self._free_stamp, self._stamp,
            np.asarray(pose.position, np.float64), np.ascontiguousarray(ends), is_hit.copy(),
            np.asarray(self.config.origin, np.float64), float(self.config.resolution),
            np.asarray(self.dims, np.int64),
            np.float32(p.l_hit), np.float32(p.l_miss), np.float32(p.l_min), np.float32(p.l_max),
        )

    def probabilities(self) -> np.ndarray:
        """Flat occupancy probabilities; untouched voxels are 0.5."""
        p = 1.0 / (1.0 + np.exp(-self.log_odds.astype(np.float64)))
        return np.where(self.touched, p, 0.5)

    def states(self) -> np.ndarray:
        p = self.probabilities()
        d = self.params.delta
        s = np.full(p.shape, UNKNOWN, np.int8)
        s[self.touched & (p > 0.5 + d)] = OCCUPIED
        s[self.touched & (p < 0.5 - d)] = FREE
        return s

    def occupancy(self, idx) -> tuple[float, int]:
        """(probability, state) of one voxel."""
        f = self.flat_index(idx)
        if not self.touched[f]:
            return 0.5, UNKNOWN
        p = 1.0 / (1.0 + math.exp(-float(self.log_odds[f])))
        d = self.params.delta
        state = OCCUPIED if p > 0.5 + d else FREE if p < 0.5 - d else UNKNOWN
        return p, state

    def voxel_centers(self, flat: np.ndarray) -> np.ndarray:
        nx, ny, nz = self.dims
        ix, rem = np.divmod(flat, ny * nz)
        iy, iz = np.divmod(rem, nz)
        ijk = np.stack([ix, iy, iz], axis=1)
        return np.asarray(self.config.origin) + (ijk + 0.5) * self.config.resolution

    def same_layout(self, other: "VoxelGrid") -> bool:
        return self.config == other.config


def build_map(scans, grid_cfg: GridConfig, params: OccupancyParams | None = None,
              max_range: float = math.inf) -> VoxelGrid:
    """Integrate (RangeImage | PointCloud, Pose) pairs in order."""
    grid = VoxelGrid(grid_cfg, params or OccupancyParams())
    for scan, pose in scans:
        cloud = unproject(scan) if isinstance(scan, RangeImage) else scan
        grid.integrate_scan(cloud, pose, max_range)
    return grid
