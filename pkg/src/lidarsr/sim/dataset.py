"""Training pairs: ray-cast high-res scans, row-subsampled inputs, augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from lidarsr.rng import stream
from lidarsr.geometry import Pose, RangeImage, SensorIntrinsics, subsample_rows
from lidarsr.sim.lidar import raycast_scan
from lidarsr.sim.scene import Scene, Trajectory

VALID_FACTORS = (2, 4, 8)


@dataclass(frozen=True)
class ScanPair:
    low: RangeImage
    high: RangeImage
    pose: Pose
    factor: int


@dataclass(frozen=True)
class AugmentConfig:
    flip_topdown: float = 0.0
    flip_horizontal: float = 0.0
    shift_cols: int = 0
    range_scale: tuple[float, float] = (1.0, 1.0)
    # extra augmented copies per pose is multiplier - 1; the first copy is untouched
    multiplier: int = 1
    # mounting attitude jitter applied while gathering, before augmentation
    attitude_jitter_deg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("flip_topdown", "flip_horizontal"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        lo, hi = self.range_scale
        if not 0.0 < lo <= hi:
            raise ValueError(f"range_scale must satisfy 0 < lo <= hi, got {self.range_scale}")
        if self.shift_cols < 0:
            raise ValueError("shift_cols must be >= 0")
        if self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")
        object.__setattr__(self, "range_scale", (float(lo), float(hi)))

    @classmethod
    def default_training(cls, seed: int = 0, multiplier: int = 8) -> "AugmentConfig":
        return cls(
            flip_topdown=0.5,
            flip_horizontal=0.5,
            shift_cols=1 << 30,
            range_scale=(0.85, 1.15),
            multiplier=multiplier,
            attitude_jitter_deg=3.0,
            seed=seed,
        )


@dataclass(frozen=True)
class AugmentDraw:
    """Concrete augmentation choices for one copy."""

    flip_topdown: bool = False
    flip_horizontal: bool = False
    shift: int = 0
    scale: float = 1.0


def draw_augmentation(cfg: AugmentConfig, rng: np.random.Generator, h_res: int) -> AugmentDraw:
    u = rng.random(3)
    shift = int(rng.integers(0, min(cfg.shift_cols, h_res - 1) + 1)) if cfg.shift_cols else 0
    lo, hi = cfg.range_scale
    scale = float(rng.uniform(lo, hi)) if hi > lo else lo
    return AugmentDraw(bool(u[0] < cfg.flip_topdown), bool(u[1] < cfg.flip_horizontal), shift, scale)


def apply_augmentation(pair: ScanPair, draw: AugmentDraw) -> ScanPair:
    intr = pair.high.intrinsics
    hi = np.array(pair.high.data)
    if draw.flip_topdown:
        hi = hi[::-1]
    if draw.flip_horizontal:
        hi = hi[:, ::-1]
    if draw.shift:
        hi = np.roll(hi, draw.shift, axis=1)
    if draw.scale != 1.0:
        valid = hi != 0
        scaled = hi[valid].astype(np.float64) * draw.scale
        hi[valid] = np.clip(scaled, intr.min_range_m, intr.max_range_m).astype(np.float32)
    high = RangeImage(intr, hi)
    return replace(pair, high=high, low=subsample_rows(high, pair.factor))


def augment_pair(pair: ScanPair, cfg: AugmentConfig, rng: np.random.Generator) -> ScanPair:
    return apply_augmentation(pair, draw_augmentation(cfg, rng, pair.high.intrinsics.h_res))


def jitter_pose(pose: Pose, jitter_deg: float, rng: np.random.Generator) -> Pose:
    if jitter_deg <= 0:
        return pose
    dp, dr = rng.uniform(-jitter_deg, jitter_deg, size=2)
    return replace(pose, pitch=pose.pitch + math.radians(dp), roll=pose.roll + math.radians(dr))


def make_pair(scene: Scene, pose: Pose, hi_intr: SensorIntrinsics, factor: int) -> ScanPair:
    if factor not in VALID_FACTORS:
        raise ValueError(f"factor must be one of {VALID_FACTORS}, got {factor}")
    high = raycast_scan(scene, pose, hi_intr)
    return ScanPair(subsample_rows(high, factor), high, pose, factor)


def generate_dataset(
    scene: Scene,
    trajectory: Trajectory,
    hi_intr: SensorIntrinsics,
    factor: int,
    augment: AugmentConfig = AugmentConfig(),
) -> list[ScanPair]:
    """``len(trajectory) * augment.multiplier`` pairs, a pure function of the inputs."""
    if factor not in VALID_FACTORS:
        raise ValueError(f"factor must be one of {VALID_FACTORS}, got {factor}")
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    pairs = []
    for i, pose in enumerate(trajectory.poses):
        pose = jitter_pose(pose, augment.attitude_jitter_deg, stream(augment.seed, 0, i))
        base = make_pair(scene, pose, hi_intr, factor)
        pairs.append(base)
        for k in range(1, augment.multiplier):
            pairs.append(augment_pair(base, augment, stream(augment.seed, 1, i, k)))
    return pairs


@dataclass
class ArrayDataset:
    """Normalized training tensors, shape (N, 1, rows, cols)."""

    low: np.ndarray
    high: np.ndarray
    factor: int
    low_intrinsics: SensorIntrinsics
    high_intrinsics: SensorIntrinsics
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.low)


def to_arrays(pairs: list[ScanPair]) -> ArrayDataset:
    if not pairs:
        raise ValueError("empty dataset")
    hi_intr = pairs[0].high.intrinsics
    scale = np.float32(hi_intr.max_range_m)
    low = np.stack([p.low.data for p in pairs])[:, None] / scale
    high = np.stack([p.high.data for p in pairs])[:, None] / scale
    return ArrayDataset(
        low.astype(np.float32), high.astype(np.float32), pairs[0].factor,
        pairs[0].low.intrinsics, hi_intr,
    )
