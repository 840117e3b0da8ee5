"""``lidarsr`` command line: gen-data, train, upscale, map, eval and pipeline."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from lidarsr import io
from lidarsr.config import ConfigError, PipelineConfig, apply_overrides, load_config, save_config
from lidarsr.sim.scene import SceneFormatError

log = logging.getLogger("lidarsr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METHODS = ("baseline", "linear", "cubic", "nn", "nn-mc")


def _thread_limit():
    n = os.environ.get("LSR_THREADS")
    if not n:
        return nullcontext()
    try:
        n = int(n)
    except ValueError:
        raise ConfigError(f"LSR_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, n))


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _load_cfg(args) -> PipelineConfig:
    base = PipelineConfig.full_scale() if getattr(args, "full", False) else PipelineConfig()
    cfg = load_config(args.config, base) if getattr(args, "config", None) else base.validate()
    return apply_overrides(cfg, getattr(args, "set", None) or [])


def _upscaler(method: str, factor: int, model, cfg: PipelineConfig):
    from lidarsr.upscale import CubicUpscaler, LinearUpscaler, NeuralUpscaler

    if method == "linear":
        return LinearUpscaler(factor)
    if method == "cubic":
        return CubicUpscaler(factor)
    if model is None:
        raise ConfigError(f"method {method} needs --model")
    spec, state, _ = model
    if spec.factor != factor:
        raise ConfigError(f"model upscales by {spec.factor} but the scans need factor {factor}")
    mc = cfg.mc_config() if method == "nn-mc" else None
    return NeuralUpscaler(spec, state.params, mc)


# --- commands --------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from lidarsr.sim.dataset import AugmentConfig, generate_dataset
    from lidarsr.sim.scene import load_scene, load_trajectory

    cfg = _load_cfg(args)
    intr = cfg.intrinsics()
    if args.channels:
        from dataclasses import replace

        intr = replace(intr, channels=args.channels)
    factor = args.factor or cfg.factor
    if args.random_worlds:
        from lidarsr.rng import stream
        from lidarsr.sim.worlds import random_world

        pairs = []
        base = cfg.augment_config()
        for w in range(args.random_worlds):
            scene, traj = random_world(stream(args.seed, 10, w), args.poses_per_world)
            aug = AugmentConfig(**{**base.__dict__, "multiplier": args.augment_mult,
                                   "seed": args.seed * 1_000_003 + w})
            pairs += generate_dataset(scene, traj, intr, factor, aug)
    else:
        if not args.scene or not args.traj:
            raise ConfigError("gen-data needs --scene and --traj, or --random-worlds")
        scene = load_scene(_require_file(args.scene, "scene file"))
        traj = load_trajectory(_require_file(args.traj, "trajectory file"))
        aug = AugmentConfig()
        if args.augment_mult > 1:
            aug = AugmentConfig(**{**cfg.augment_config().__dict__, "multiplier": args.augment_mult,
                                   "seed": args.seed})
        pairs = generate_dataset(scene, traj, intr, factor, aug)
    path = io.write_dataset(args.out, pairs, {"seed": args.seed})
    print(f"wrote {len(pairs)} pairs to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from lidarsr.nn.network import build_srnet
    from lidarsr.nn.train import train
    from lidarsr.sim.dataset import to_arrays

    cfg = _load_cfg(args)
    pairs, manifest = io.load_dataset(_require_file(args.data, "dataset"))
    if args.factor and args.factor != manifest["factor"]:
        raise ConfigError(f"--factor {args.factor} does not match dataset factor {manifest['factor']}")
    data = to_arrays(pairs)
    epochs = cfg.net.epochs if args.epochs is None else args.epochs
    if args.resume:
        spec, state, meta = io.load_model(_require_file(args.resume, "model"))
        if spec.factor != data.factor:
            raise ConfigError(f"model factor {spec.factor} does not match dataset factor {data.factor}")
    else:
        spec = build_srnet(data.factor, cfg.net.base_filters, cfg.net.dropout)
        state, meta = None, {}
    state = train(spec, data.low, data.high, epochs, cfg.net.batch, args.seed, cfg.net.lr, cfg.net.decay,
                  state=state)
    io.save_model(args.out, spec, state, {**meta, "train_seed": args.seed, "pairs": len(data)})
    loss_path = Path(args.loss_csv or str(args.out) + ".loss.csv")
    io.write_loss_csv(loss_path, state)
    final = state.losses[-1] if state.losses else float("nan")
    print(f"final train L1 {final:.6f} after {state.epochs_done} epochs; model {args.out}")
    return EXIT_OK


def cmd_upscale(args) -> int:
    from lidarsr.geometry import unproject
    from lidarsr.upscale import upscale_scan

    cfg = _load_cfg(args)
    low = io.read_scan(_require_file(args.input, "scan"))
    model = io.load_model(_require_file(args.model, "model")) if args.model else None
    factor = args.factor or (model[0].factor if model else cfg.factor)
    up = _upscaler(args.method, factor, model, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    img, res = upscale_scan(low, up)
    io.write_scan(out / f"{stem}_{args.method}.lsrs", img)
    io.write_cloud_csv(out / f"{stem}_{args.method}_points.csv", unproject(img))
    if res.mc is not None:
        s = io.write_mc_result(out, f"{stem}_{args.method}", res.mc, img.intrinsics, up.mc)
        print(f"removed_fraction {s['removed_fraction']:.4f}%")
    print(f"upscaled {low.shape} -> {img.shape} with {args.method} in {1000 * res.seconds:.1f} ms")
    return EXIT_OK


def _grid_config(cfg: PipelineConfig, bounds):
    from lidarsr.experiments import OFFICE_BOUNDS, TOWN_BOUNDS
    from lidarsr.mapping import GridConfig

    if bounds is None:
        if cfg.eval.bounds is not None:
            bounds = cfg.eval.bounds
        elif cfg.eval.scene == "town":
            bounds = TOWN_BOUNDS
        elif cfg.eval.scene == "office":
            bounds = OFFICE_BOUNDS
        else:
            raise ConfigError("grid bounds needed: pass --bounds or set eval.bounds")
    else:
        bounds = (bounds[:3], bounds[3:])
    return GridConfig.covering(bounds[0], bounds[1], cfg.eval.resolution)


def cmd_map(args) -> int:
    from lidarsr.mapping import build_map

    cfg = _load_cfg(args)
    if args.data:
        pairs, _ = io.load_dataset(_require_file(args.data, "dataset"))
        scans = [((p.high if args.which == "high" else p.low), p.pose) for p in pairs]
    else:
        if not args.scans or not args.poses:
            raise ConfigError("map needs --data, or --scans with --poses")
        poses = io.load_poses(_require_file(args.poses, "pose file"))
        if len(poses) != len(args.scans):
            raise ConfigError(f"{len(args.scans)} scans but {len(poses)} poses in {args.poses}")
        scans = [(io.read_scan(_require_file(s, "scan")), p) for s, p in zip(args.scans, poses)]
    grid = build_map(scans, _grid_config(cfg, args.bounds))
    io.save_grid(args.out, grid)
    n = io.write_occupied_csv(args.occupied_csv, grid) if args.occupied_csv else None
    print(f"map {grid.dims} from {len(scans)} scans -> {args.out}" + (f" ({n} occupied)" if n is not None else ""))
    return EXIT_OK


def cmd_eval(args) -> int:
    from lidarsr.evaluation import (
        EvalSet,
        MetricsReport,
        evaluate_method,
        roc_auc,
        write_metrics_csv,
        write_roc_csv,
    )

    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.truth:
        truth = io.load_grid(_require_file(args.truth, "truth grid"))
        reports, curves = [], {}
        for item in args.grids:
            name, _, path = item.rpartition("=")
            grid = io.load_grid(_require_file(path, "grid"))
            if not grid.same_layout(truth):
                raise ConfigError(f"grid {path} has layout {grid.config}, truth has {truth.config}")
            roc = roc_auc(grid, truth)
            name = name or Path(path).stem
            reports.append(MetricsReport(name, None, None, roc.auc, 0, None, roc))
            curves[name] = roc
    else:
        pairs, manifest = io.load_dataset(_require_file(args.data, "dataset"))
        model = io.load_model(_require_file(args.model, "model")) if args.model else None
        methods = args.methods.split(",") if args.methods else cfg.eval.methods
        evalset = EvalSet(pairs, _grid_config(cfg, args.bounds))
        reports, curves = [], {}
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
            up = "baseline" if m == "baseline" else _upscaler(m, manifest["factor"], model, cfg)
            rep, grid, _ = evaluate_method(evalset, up)
            if args.save_grids:
                io.save_grid(out / f"map_{m}.lsrg", grid)
            reports.append(rep)
            curves[m] = rep.roc
        if args.save_grids:
            io.save_grid(out / "map_truth.lsrg", evalset.truth_map())
    write_metrics_csv(reports, out / "metrics.csv")
    write_roc_csv(curves, out / "roc.csv")
    for r in reports:
        print(" ".join(f"{k}={v}" for k, v in r.row().items()))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    """gen-data -> train -> upscale -> map -> eval, all under one output directory."""
    from lidarsr.pipeline import run_pipeline

    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    reports = run_pipeline(cfg, out)
    for r in reports:
        print(" ".join(f"{k}={v}" for k, v in r.row().items()))
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidarsr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON pipeline config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
        sp.add_argument("--full", action="store_true", help="full-scale defaults (1024 columns, 32 filters)")
        sp.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gen-data", help="ray-cast training or test pairs")
    common(g)
    g.add_argument("--scene")
    g.add_argument("--traj")
    g.add_argument("--random-worlds", type=int, default=0, help="use N generated worlds instead of --scene")
    g.add_argument("--poses-per-world", type=int, default=4)
    g.add_argument("--channels", type=int)
    g.add_argument("--factor", type=int)
    g.add_argument("--augment-mult", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the upscaling network")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--factor", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", help="continue from this model file")
    t.add_argument("--out", required=True)
    t.add_argument("--loss-csv")
    t.set_defaults(func=cmd_train)

    u = sub.add_parser("upscale", help="upscale one LSRS scan")
    common(u)
    u.add_argument("--model")
    u.add_argument("--in", dest="input", required=True)
    u.add_argument("--method", choices=METHODS[1:], required=True)
    u.add_argument("--factor", type=int)
    u.add_argument("--out", required=True)
    u.set_defaults(func=cmd_upscale)

    m = sub.add_parser("map", help="build an occupancy grid from registered scans")
    common(m)
    m.add_argument("--data", help="dataset directory (uses its poses)")
    m.add_argument("--which", choices=("high", "low"), default="high")
    m.add_argument("--scans", nargs="+")
    m.add_argument("--poses", help="JSON list of poses matching --scans")
    m.add_argument("--bounds", type=float, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
    m.add_argument("--out", required=True)
    m.add_argument("--occupied-csv")
    m.set_defaults(func=cmd_map)

    e = sub.add_parser("eval", help="metrics.csv and roc.csv for several methods")
    common(e)
    e.add_argument("--data", help="test dataset directory")
    e.add_argument("--model")
    e.add_argument("--methods", help="comma list of " + ",".join(METHODS))
    e.add_argument("--bounds", type=float, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))
    e.add_argument("--truth", help="compare prebuilt grids against this truth grid")
    e.add_argument("--grids", nargs="*", default=[], metavar="NAME=PATH")
    e.add_argument("--save-grids", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("pipeline", help="gen-data, train, upscale, map and eval in one go")
    common(pl)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval" and not args.truth and not args.data:
            raise ConfigError("eval needs --data or --truth")
        with _thread_limit():
            np.seterr(all="ignore")
            return args.func(args)
    except (ConfigError, FileNotFoundError, PermissionError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (io.DataFormatError, SceneFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
