"""End-to-end run: data generation, training, upscaling, mapping and evaluation."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from lidarsr import io
from lidarsr.config import ConfigError, PipelineConfig
from lidarsr.evaluation import EvalSet, evaluate_method, write_metrics_csv, write_roc_csv
from lidarsr.experiments import OFFICE_BOUNDS, TOWN_BOUNDS
from lidarsr.mapping import GridConfig
from lidarsr.nn.network import build_srnet
from lidarsr.nn.train import train
from lidarsr.rng import stream
from lidarsr.sim.dataset import AugmentConfig, generate_dataset, to_arrays
from lidarsr.sim.scene import load_scene, load_trajectory
from lidarsr.sim.worlds import (
    eval_town,
    eval_town_trajectory,
    office_scene,
    office_trajectory,
    random_world,
)
from lidarsr.upscale import CubicUpscaler, LinearUpscaler, NeuralUpscaler

log = logging.getLogger(__name__)


def training_pairs(cfg: PipelineConfig):
    intr = cfg.intrinsics()
    base = cfg.augment_config()
    pairs = []
    for w in range(cfg.corpus.worlds):
        scene, traj = random_world(stream(cfg.seed, 10, w), cfg.corpus.poses_per_world)
        aug = AugmentConfig(**{**base.__dict__, "seed": cfg.seed * 1_000_003 + w})
        pairs += generate_dataset(scene, traj, intr, cfg.factor, aug)
    return pairs


def test_scene(cfg: PipelineConfig):
    """(scene, trajectory, grid bounds) of the evaluation scene."""
    ev = cfg.eval
    if ev.scene_path or ev.trajectory_path:
        if not (ev.scene_path and ev.trajectory_path and ev.bounds):
            raise ConfigError("custom eval scene needs scene_path, trajectory_path and bounds")
        return load_scene(ev.scene_path), load_trajectory(ev.trajectory_path), ev.bounds
    if ev.scene == "office":
        return office_scene(), office_trajectory(ev.scans), ev.bounds or OFFICE_BOUNDS
    if ev.scene == "town":
        return eval_town(), eval_town_trajectory(ev.scans), ev.bounds or TOWN_BOUNDS
    raise ConfigError(f"unknown eval scene {ev.scene!r}")


def run_pipeline(cfg: PipelineConfig, out_dir, timing: bool = True):
    """Writes train/, test/, model.lsrm, upscaled/, maps/, metrics.csv and roc.csv.

    With ``timing`` off the ms_per_image column is N/A, which makes every
    output file a pure function of the config.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    train_pairs = training_pairs(cfg)
    io.write_dataset(out / "train", train_pairs, {"seed": cfg.seed})
    scene, traj, bounds = test_scene(cfg)
    test_pairs = generate_dataset(scene, traj, cfg.intrinsics(), cfg.factor)
    io.write_dataset(out / "test", test_pairs, {"seed": cfg.seed})
    log.info("%d training pairs, %d test scans", len(train_pairs), len(test_pairs))

    data = to_arrays(train_pairs)
    spec = build_srnet(cfg.factor, cfg.net.base_filters, cfg.net.dropout)
    state = train(spec, data.low, data.high, cfg.net.epochs, cfg.net.batch, cfg.seed, cfg.net.lr, cfg.net.decay)
    io.save_model(out / "model.lsrm", spec, state, {"pairs": len(data), "seed": cfg.seed})
    io.write_loss_csv(out / "loss.csv", state)

    evalset = EvalSet(test_pairs, GridConfig.covering(bounds[0], bounds[1], cfg.eval.resolution))
    (out / "maps").mkdir(exist_ok=True)
    io.save_grid(out / "maps" / "truth.lsrg", evalset.truth_map())
    makers = {
        "baseline": lambda: "baseline",
        "linear": lambda: LinearUpscaler(cfg.factor),
        "cubic": lambda: CubicUpscaler(cfg.factor),
        "nn": lambda: NeuralUpscaler(spec, state.params),
        "nn-mc": lambda: NeuralUpscaler(spec, state.params, cfg.mc_config()),
    }
    reports, curves = [], {}
    for name in cfg.eval.methods:
        rep, grid, outputs = evaluate_method(evalset, makers[name](), keep_outputs=True)
        if not timing:
            rep.ms_per_image = None
        io.save_grid(out / "maps" / f"{name}.lsrg", grid)
        if outputs:
            d = out / "upscaled" / name
            d.mkdir(parents=True, exist_ok=True)
            for i, (img, res) in enumerate(outputs):
                io.write_scan(d / f"{i:05d}.lsrs", img)
                if res.mc is not None:
                    io.write_mc_result(d, f"{i:05d}", res.mc, img.intrinsics, cfg.mc_config())
        reports.append(rep)
        curves[name] = rep.roc
        log.info("%s", rep.row())
    write_metrics_csv(reports, out / "metrics.csv")
    write_roc_csv(curves, out / "roc.csv")
    if not all(np.isfinite(r.auc) for r in reports):
        raise FloatingPointError("non-finite AUC")
    return reports
