"""Held-out L1 / removed % / AUC of the MC-dropout network for factors 2, 4 and 8.

    python3 scripts/factor_sweep.py --scene town --out results/sweep.csv
"""

import argparse
import logging
from pathlib import Path

from lidarsr.evaluation import MetricsReport, evaluate_method, write_metrics_csv
from lidarsr.experiments import desk_intrinsics, desk_model, office_evalset, town_evalset
from lidarsr.upscale import McConfig, NeuralUpscaler

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scene", choices=["office", "town"], default="town")
    ap.add_argument("--factors", type=int, nargs="+", default=[8, 4, 2])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cache", type=Path, default=ROOT / ".cache" / "acceptance")
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    intr = desk_intrinsics()
    make = office_evalset if args.scene == "office" else town_evalset
    reports = []
    for factor in args.factors:
        m = desk_model(args.cache, factor, args.seed)
        rep, _, _ = evaluate_method(make(intr, factor), NeuralUpscaler(m.spec, m.state.params, McConfig(seed=args.seed)))
        rep = MetricsReport(f"nn-mc {64 // factor}->64", rep.l1, rep.removed_pct, rep.auc, rep.scan_count,
                            rep.ms_per_image)
        reports.append(rep)
        print(" ".join(f"{k}={v}" for k, v in rep.row().items()), flush=True)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(reports, args.out)


if __name__ == "__main__":
    main()
