"""FM vs FM + SSL terms on the synthetic long-tail task, several seeds.

Prints representation reductions, SSL loss drops and frequency-bucket
Logloss per seed; --json keeps the raw numbers.

    python scripts/synthetic_pairs.py --seeds 0 1 2 3 4
"""
import argparse
import json
from dataclasses import asdict

from cl4ctr.experiments import SyntheticProtocol, run_pair


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--instances", type=int, default=None)
    ap.add_argument("--json", default=None)
    args = ap.parse_args()

    proto = SyntheticProtocol()
    if args.epochs:
        proto.train.max_epochs = args.epochs
    if args.instances:
        proto.synth.num_instances = args.instances

    out = []
    for seed in args.seeds:
        r = run_pair(proto, seed)
        out.append(r)
        print(f"seed {seed}  ({r.seconds:.0f}s)")
        print(f"  AUC        base {r.base_auc:.4f}  ssl {r.ssl_auc:.4f}")
        print(f"  intra dist reduction {r.reduction('intra_field_distance'):+.3f}"
              f"   cross |cos| reduction {r.reduction('cross_field_abs_cos'):+.3f}")
        print(f"  L_cl drop {r.loss_drop('l_cl'):+.3f}   L_a drop {r.loss_drop('l_a'):+.3f}"
              f"   (best epoch {r.best_epoch})")
        print("  bucket Logloss (base) " + " ".join(f"{v:.4f}" for v in r.base_buckets))
        print("  bucket delta          " + " ".join(f"{v:+.4f}" for v in r.delta_buckets))

    if args.json:
        with open(args.json, "w") as fh:
            json.dump([asdict(r) for r in out], fh, indent=2)


if __name__ == "__main__":
    main()
