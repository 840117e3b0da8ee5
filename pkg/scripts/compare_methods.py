"""Baseline / linear / cubic / nn / nn-mc on a held-out scene with a desk-scale model.

    python3 scripts/compare_methods.py --scene office --out results/office
    python3 scripts/compare_methods.py --scene town --factor 4 --seed 1 --out results/town
"""

import argparse
import logging
from pathlib import Path

from lidarsr import io
from lidarsr.evaluation import evaluate_method, write_metrics_csv, write_roc_csv
from lidarsr.experiments import desk_intrinsics, desk_model, office_evalset, town_evalset
from lidarsr.upscale import CubicUpscaler, LinearUpscaler, McConfig, NeuralUpscaler

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scene", choices=["office", "town"], default="office")
    ap.add_argument("--factor", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scans", type=int, default=25)
    ap.add_argument("--resolution", type=float, help="voxel size (default 0.05 office, 0.3 town)")
    ap.add_argument("--T", type=int, default=50)
    ap.add_argument("--lam", type=float, default=0.03)
    ap.add_argument("--cache", type=Path, default=ROOT / ".cache" / "acceptance")
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    intr = desk_intrinsics()
    make = office_evalset if args.scene == "office" else town_evalset
    res = args.resolution or (0.05 if args.scene == "office" else 0.3)
    evalset = make(intr, args.factor, args.scans, res)
    m = desk_model(args.cache, args.factor, args.seed)
    methods = ["baseline", LinearUpscaler(args.factor), CubicUpscaler(args.factor),
               NeuralUpscaler(m.spec, m.state.params),
               NeuralUpscaler(m.spec, m.state.params, McConfig(T=args.T, lam=args.lam, seed=args.seed))]

    args.out.mkdir(parents=True, exist_ok=True)
    io.save_grid(args.out / "map_truth.lsrg", evalset.truth_map())
    reports = []
    for method in methods:
        rep, grid, _ = evaluate_method(evalset, method)
        io.save_grid(args.out / f"map_{rep.method}.lsrg", grid)
        reports.append(rep)
        print(" ".join(f"{k}={v}" for k, v in rep.row().items()), flush=True)
    write_metrics_csv(reports, args.out / "metrics.csv")
    write_roc_csv({r.method: r.roc for r in reports}, args.out / "roc.csv")


if __name__ == "__main__":
    main()
