"""Trains (or loads) the desk-scale models used by the acceptance suite.

    python3 scripts/train_desk_models.py                # factors 2/4/8 seed 0, factor 4 seeds 1/2
    python3 scripts/train_desk_models.py --factors 4 --seeds 0
"""

import argparse
import logging
from pathlib import Path

from lidarsr.experiments import desk_model

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--cache", type=Path, default=ROOT / ".cache" / "acceptance")
    ap.add_argument("--factors", type=int, nargs="+", default=[4, 2, 8])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    jobs = [(f, 0) for f in args.factors] + [(4, s) for s in args.seeds if s != 0 and 4 in args.factors]
    for factor, seed in jobs:
        m = desk_model(args.cache, factor, seed)
        print(f"factor {factor} seed {seed}: final train L1 {m.state.losses[-1]:.5f}, "
              f"{m.meta['pairs']} pairs, {m.meta['train_seconds'] / 60:.1f} min", flush=True)


if __name__ == "__main__":
    main()
