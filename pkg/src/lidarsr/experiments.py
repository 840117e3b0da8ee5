"""Reusable experiment recipes: training corpora, held-out evaluation sets, trained models."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from lidarsr.evaluation import EvalSet
from lidarsr.geometry import SensorIntrinsics
from lidarsr.mapping import GridConfig
from lidarsr.nn.network import NetworkSpec, build_srnet
from lidarsr.nn.train import TrainState, train
from lidarsr.rng import stream
from lidarsr.sim.dataset import AugmentConfig, ArrayDataset, generate_dataset, to_arrays
from lidarsr.sim.worlds import (
    eval_town,
    eval_town_trajectory,
    office_scene,
    office_trajectory,
    random_world,
)

log = logging.getLogger(__name__)

# map extents of the held-out scenes (world frame, meters)
OFFICE_BOUNDS = ((-6.2, -5.2, -0.1), (6.2, 5.2, 2.8))
TOWN_BOUNDS = ((-50.0, -20.0, -0.3), (50.0, 20.0, 9.9))


@dataclass(frozen=True)
class CorpusConfig:
    """Training data drawn from randomly generated towns and rooms."""

    worlds: int = 32
    poses_per_world: int = 4
    multiplier: int = 2
    seed: int = 0

    @property
    def size(self) -> int:
        return self.worlds * self.poses_per_world * self.multiplier


def training_corpus(hi_intr: SensorIntrinsics, factor: int, cfg: CorpusConfig = CorpusConfig()) -> ArrayDataset:
    pairs = []
    for w in range(cfg.worlds):
        scene, traj = random_world(stream(cfg.seed, 10, w), cfg.poses_per_world)
        aug = AugmentConfig.default_training(seed=cfg.seed * 1_000_003 + w, multiplier=cfg.multiplier)
        pairs += generate_dataset(scene, traj, hi_intr, factor, aug)
    data = to_arrays(pairs)
    data.meta = {"worlds": cfg.worlds, "poses_per_world": cfg.poses_per_world,
                 "multiplier": cfg.multiplier, "seed": cfg.seed}
    return data


def office_evalset(hi_intr: SensorIntrinsics, factor: int, n_scans: int = 25,
                   resolution: float = 0.05) -> EvalSet:
    pairs = generate_dataset(office_scene(), office_trajectory(n_scans), hi_intr, factor)
    return EvalSet(pairs, GridConfig.covering(*OFFICE_BOUNDS, resolution))


def town_evalset(hi_intr: SensorIntrinsics, factor: int, n_scans: int = 25,
                 resolution: float = 0.3) -> EvalSet:
    pairs = generate_dataset(eval_town(), eval_town_trajectory(n_scans), hi_intr, factor)
    return EvalSet(pairs, GridConfig.covering(*TOWN_BOUNDS, resolution))


@dataclass(frozen=True)
class TrainConfig:
    base_filters: int = 8
    dropout: float = 0.25
    epochs: int = 20
    batch: int = 8
    lr: float = 1e-4
    decay: float = 1e-5
    seed: int = 0


@dataclass
class TrainedModel:
    spec: NetworkSpec
    state: TrainState
    config: TrainConfig
    meta: dict = field(default_factory=dict)


def train_model(data: ArrayDataset, cfg: TrainConfig, callback=None) -> TrainedModel:
    spec = build_srnet(data.factor, cfg.base_filters, cfg.dropout)
    state = train(spec, data.low, data.high, cfg.epochs, cfg.batch, cfg.seed, cfg.lr, cfg.decay,
                  callback=callback)
    return TrainedModel(spec, state, cfg, {"corpus": dict(data.meta)})


def desk_intrinsics(channels: int = 64, h_res: int = 256) -> SensorIntrinsics:
    return SensorIntrinsics(channels=channels, h_res=h_res)


def heldout_l1(model: TrainedModel, evalset: EvalSet) -> float:
    from lidarsr.evaluation import l1_metric
    from lidarsr.geometry import normalize
    from lidarsr.nn.train import predict

    low = np.stack([normalize(p.low) for p in evalset.pairs])[:, None]
    high = np.stack([normalize(p.high) for p in evalset.pairs])[:, None]
    return l1_metric(predict(model.spec, model.state.params, low), high)


def model_key(hi_intr: SensorIntrinsics, factor: int, corpus: CorpusConfig, cfg: TrainConfig) -> str:
    blob = json.dumps({"intrinsics": hi_intr.to_dict(), "factor": factor,
                       "corpus": asdict(corpus), "train": asdict(cfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cached_model(cache_dir, hi_intr: SensorIntrinsics, factor: int, corpus: CorpusConfig,
                 cfg: TrainConfig) -> TrainedModel:
    """Trains once per (sensor, factor, corpus, training) combination and keeps
    the result under ``cache_dir``; training is deterministic, so a cached
    model equals a fresh one. Wall-clock training time is kept in the meta."""
    from lidarsr import io

    path = Path(cache_dir) / f"srnet_f{factor}_s{cfg.seed}_{model_key(hi_intr, factor, corpus, cfg)}.lsrm"
    if path.exists():
        spec, state, meta = io.load_model(path)
        return TrainedModel(spec, state, cfg, meta)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = training_corpus(hi_intr, factor, corpus)
    log.info("training factor %d seed %d on %d pairs", factor, cfg.seed, len(data))
    model = train_model(data, cfg)
    model.meta.update(pairs=len(data), train_seconds=model.state.seconds)
    io.save_model(path, model.spec, model.state, model.meta)
    return model


# desk-scale recipe: 16 -> 64 channels at factor 4, 256 columns, 200 pairs, 50 epochs;
# lr 1e-3 because 50 epochs of 200 pairs are too few steps at 1e-4
DESK_CORPUS = CorpusConfig(worlds=25, poses_per_world=4, multiplier=2)
DESK_TRAIN = TrainConfig(epochs=50, lr=1e-3)


def desk_model(cache_dir, factor: int, seed: int = 0) -> TrainedModel:
    return cached_model(cache_dir, desk_intrinsics(), factor, replace(DESK_CORPUS, seed=seed),
                        replace(DESK_TRAIN, seed=seed))
