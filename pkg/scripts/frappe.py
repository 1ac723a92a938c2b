"""FM and CL4CTR_FM on a prepared Frappe directory, mean over seeds.

Prepare the data first (header row, one label column):

    cl4ctr prepare frappe.csv --out data/frappe --ratios 0.7,0.2,0.1
    python scripts/frappe.py data/frappe
"""
import argparse

import numpy as np

from cl4ctr.cli import load_data_dir
from cl4ctr.trainer import TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("data_dir")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    _, (tr, va, te) = load_data_dir(args.data_dir)
    rows = {"FM": [], "CL4CTR_FM": []}
    for seed in args.seeds:
        base = TrainConfig(seed=seed, alpha=0.0, beta=0.0, track_frozen_ssl=False)
        rows["FM"].append(train(base, tr, va, te, with_ssl=False).report)
        rows["CL4CTR_FM"].append(train(TrainConfig(seed=seed), tr, va, te).report)
        for name, reps in rows.items():
            r = reps[-1]
            print(f"seed {seed} {name:10s} AUC {r.test_auc:.4f}  Logloss {r.test_logloss:.4f}")

    for name, reps in rows.items():
        a = np.array([r.test_auc for r in reps])
        ll = np.array([r.test_logloss for r in reps])
        print(f"{name:10s} AUC {a.mean():.4f} +- {a.std():.4f}  Logloss {ll.mean():.4f} +- {ll.std():.4f}")


if __name__ == "__main__":
    main()
