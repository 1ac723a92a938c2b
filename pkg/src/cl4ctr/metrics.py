"""AUC, Logloss and the feature-frequency bucket analysis."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import EncodedDataset

CLAMP = 1e-15
DEFAULT_BOUNDARIES = (1, 5, 10, 20, 50, math.inf)


class UndefinedAUC(ValueError):
    """AUC needs at least one positive and one negative label."""


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty_like(x)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney statistic; tied scores count one half."""
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC("AUC undefined for single-class labels")
    r = average_ranks(scores)
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(probas, labels) -> float:
    p = np.clip(np.asarray(probas, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclass
class EvalResult:
    auc: float | None          # None when the labels are single-class
    logloss: float
    count: int

    def to_dict(self) -> dict:
        return {"auc": self.auc if self.auc is not None else "undefined",
                "logloss": self.logloss, "count": self.count}


def evaluate_probas(probas, labels) -> EvalResult:
    try:
        a = auc(probas, labels)
    except UndefinedAUC:
        a = None
    return EvalResult(a, logloss(probas, labels), int(len(labels)))


@dataclass
class Bucket:
    low: float
    high: float
    count: int
    logloss: float
    delta_logloss: float | None = None


@dataclass
class FrequencyBucketReport:
    buckets: list[Bucket] = field(default_factory=list)
    statistic: str = "min"

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bucket_low", "bucket_high", "count", "logloss", "delta_logloss"])
            for b in self.buckets:
                w.writerow([b.low, b.high, b.count, repr(b.logloss),
                            "" if b.delta_logloss is None else repr(b.delta_logloss)])

    def to_json(self) -> str:
        return json.dumps({"statistic": self.statistic, "buckets": [
            {k: (str(v) if isinstance(v, float) and math.isinf(v) else v) for k, v in asdict(b).items()}
            for b in self.buckets]}, indent=2, sort_keys=True)


def instance_frequency(X: np.ndarray, counts: np.ndarray, statistic: str = "min") -> np.ndarray:
    freq = np.asarray(counts)[X]
    if statistic == "min":
        return freq.min(axis=1)
    if statistic == "mean":
        return freq.mean(axis=1)
    raise ValueError(f"unknown statistic {statistic!r}")


def _probas(model, X) -> np.ndarray:
    if isinstance(model, np.ndarray):
        return model
    if hasattr(model, "predict"):
        return model.predict(X)
    return np.asarray(model(X))


def frequency_bucket_logloss(model, test: EncodedDataset, counts: np.ndarray,
                             boundaries: Sequence[float] = DEFAULT_BOUNDARIES,
                             baseline=None, statistic: str = "min") -> FrequencyBucketReport:
    """Logloss per bucket of instance feature frequency (counted on TRAIN).

    ``model``/``baseline`` are objects with ``predict(X)``, callables, or
    precomputed probability arrays. Buckets are [b_i, b_{i+1}); a leading
    (-inf, b_0) bucket is added when b_0 is finite so buckets partition the
    test set. Empty buckets are omitted.
    """
    b = [float(v) for v in boundaries]
    if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
        raise ValueError("boundaries must be strictly increasing")
    if not math.isinf(b[0]):
        b = [-math.inf] + b
    if not math.isinf(b[-1]):
        b = b + [math.inf]
    freq = instance_frequency(test.X, counts, statistic)
    p = _probas(model, test.X)
    pb = None if baseline is None else _probas(baseline, test.X)
    report = FrequencyBucketReport(statistic=statistic)
    for lo, hi in zip(b, b[1:]):
        sel = (freq >= lo) & (freq < hi)
        n = int(sel.sum())
        if n == 0:
            continue
        ll = logloss(p[sel], test.y[sel])
        delta = None if pb is None else logloss(pb[sel], test.y[sel]) - ll
        report.buckets.append(Bucket(lo, hi, n, ll, delta))
    return report


def representation_stats(weight: np.ndarray, X: np.ndarray, field_ranges,
                         batch_size: int = 1024) -> dict[str, float]:
    """Geometry of the embeddings seen together in batches.

    Per batch: mean Euclidean distance over ordered pairs of distinct
    same-field features, and mean |cosine| over ordered cross-field pairs;
    both then averaged over batches.
    """
    hi = np.array([r[1] for r in field_ranges])
    dist, cos = [], []
    for start in range(0, len(X), batch_size):
        idx = np.unique(X[start:start + batch_size])
        fid = np.searchsorted(hi, idx, side="right")
        W = weight[idx]
        sq = (W * W).sum(1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * W @ W.T, 0.0)
        same = fid[:, None] == fid[None, :]
        np.fill_diagonal(same, False)
        if same.any():
            dist.append(np.sqrt(d2[same]).mean())
        norms = np.sqrt(sq)
        U = W / np.where(norms > 1e-12, norms, 1.0)[:, None]
        cross = fid[:, None] != fid[None, :]
        cos.append(np.abs(U @ U.T)[cross].mean())
    return {"intra_field_distance": float(np.mean(dist)), "cross_field_abs_cos": float(np.mean(cos))}
