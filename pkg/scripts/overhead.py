"""Upload volume and convergence for feature dimensions m = r * d.

Writes ``overhead.csv`` with the per-round FeatureBatch payload normalised to
the ``m = d`` payload, plus final AUC and convergence round when training.

    python scripts/overhead.py --bytes-only
    python scripts/overhead.py --dataset spambase --data-dir data
"""

import argparse
import csv
from pathlib import Path

from fedanomaly.config import ExperimentConfig
from fedanomaly.data import Schema, locate_files
from fedanomaly.experiment import compare_overhead


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dataset", default="synthetic")
    ap.add_argument("--data-dir", default="data")
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--rounds", type=int, default=1000)
    ap.add_argument("--bytes-only", action="store_true")
    ap.add_argument("--out", default="runs/overhead")
    args = ap.parse_args()

    paths = [] if args.dataset == "synthetic" else [str(p) for p in locate_files(Schema.named(args.dataset), args.data_dir)]
    cfg = ExperimentConfig(dataset=args.dataset, data_path=paths, max_rounds=args.rounds, eval_every=50,
                           output_dir=args.out)
    rows = compare_overhead(cfg, tuple(args.ratios), train=not args.bytes_only)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    with open(Path(args.out) / "overhead.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"r={r['ratio']:<5} payload {r['feature_payload']:>7} B  normalised {r['normalized_payload']:.3f}  "
              f"AUC-ROC {r['auc_roc']:.4f}  converged {r['converged_at']}")


if __name__ == "__main__":
    main()
