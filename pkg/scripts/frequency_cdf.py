"""Cumulative distribution of feature frequencies for a delimited file.

Prints the point where the CDF first reaches --mass (0.8 by default),
which is how a long tail is usually summarised, and optionally the
whole curve as CSV.

    python scripts/frequency_cdf.py data.csv --label label --csv cdf.csv
"""
import argparse

import numpy as np

from cl4ctr.data import build_vocabulary, frequency_cdf, read_delimited


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("input")
    ap.add_argument("--label", default="label")
    ap.add_argument("--delimiter", default=None)
    ap.add_argument("--mass", type=float, default=0.8)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()

    schema, rows = read_delimited(args.input, args.delimiter, label=args.label)
    cdf = frequency_cdf(build_vocabulary(rows, schema))
    i = int(np.searchsorted(cdf.fractions, args.mass))
    print(f"{cdf.fractions.size} distinct counts; "
          f"features seen <= {cdf.thresholds[i]} times: {cdf.fractions[i]:.2%}")
    if args.csv:
        cdf.to_csv(args.csv)


if __name__ == "__main__":
    main()
