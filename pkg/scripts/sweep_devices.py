"""Final AUC and rounds-to-convergence as the number of edge devices grows.

    python scripts/sweep_devices.py --dataset shuttle --data-dir data --devices 3 6 10 --seeds 3
    python scripts/sweep_devices.py            # synthetic data, quick
"""

import argparse
import json
from pathlib import Path

from fedanomaly.config import ExperimentConfig
from fedanomaly.data import Schema, locate_files
from fedanomaly.experiment import sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dataset", default="synthetic")
    ap.add_argument("--data-dir", default="data")
    ap.add_argument("--devices", type=int, nargs="+", default=[3, 6, 10])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--rounds", type=int, default=3000)
    ap.add_argument("--parallel", type=int, default=1, help="cells run concurrently")
    ap.add_argument("--out", default="runs/devices")
    args = ap.parse_args()

    paths = [] if args.dataset == "synthetic" else [str(p) for p in locate_files(Schema.named(args.dataset), args.data_dir)]
    cfg = ExperimentConfig(dataset=args.dataset, data_path=paths, max_rounds=args.rounds, eval_every=100,
                           output_dir=args.out)
    rows = sweep(cfg, {"seed": list(range(args.seeds)), "n_devices": args.devices}, workers=args.parallel)
    for row in rows:
        print(json.dumps(row))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    with open(Path(args.out) / "sweep.jsonl", "w") as fh:
        fh.writelines(json.dumps(r) + "\n" for r in rows)


if __name__ == "__main__":
    main()
