"""Paired synthetic runs: FM on L_ctr alone versus FM with the SSL terms.

One call trains both arms on the same data split and seed and returns the
numbers the representation, loss-trajectory and frequency-bucket checks
read off.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import SynthConfig, split, synth_generate
from .fi_encoder import EncoderConfig
from .metrics import frequency_bucket_logloss, instance_frequency, representation_stats
from .trainer import TrainConfig, epoch_losses, train


@dataclass
class SyntheticProtocol:
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(weight_scale=2.0))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        embed_dim=16, max_epochs=10, encoder=EncoderConfig(layers=3)))
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    num_buckets: int = 5          # equal-count buckets of instance min-frequency

    def arm(self, seed: int, ssl: bool) -> TrainConfig:
        d = self.train.to_dict()
        d.update(seed=seed, track_frozen_ssl=False)
        if not ssl:
            d.update(alpha=0.0, beta=0.0)
        return TrainConfig.from_dict(d)


@dataclass
class PairResult:
    seed: int
    base_stats: dict
    ssl_stats: dict
    base_auc: float
    ssl_auc: float
    losses_first: dict            # eval-mode SSL losses after epoch 1 (SSL arm)
    losses_best: dict             # same, at the restored best epoch
    best_epoch: int
    boundaries: list[float]
    base_buckets: list[float]     # baseline Logloss per bucket, lowest frequency first
    delta_buckets: list[float]    # baseline minus SSL Logloss per bucket
    seconds: float

    def reduction(self, key: str) -> float:
        """Relative decrease of a representation statistic, SSL vs baseline."""
        return 1.0 - self.ssl_stats[key] / self.base_stats[key]

    def loss_drop(self, key: str) -> float:
        return 1.0 - self.losses_best[key] / self.losses_first[key]


def quantile_boundaries(freq: np.ndarray, k: int) -> list[float]:
    qs = np.quantile(freq, np.linspace(0, 1, k + 1)[1:-1])
    return sorted(set(float(q) for q in qs))


def run_pair(protocol: SyntheticProtocol, seed: int) -> PairResult:
    t0 = time.perf_counter()
    sd = synth_generate(SynthConfig(**{**protocol.synth.__dict__, "seed": seed}))
    tr, va, te = split(sd.data, protocol.ratios, seed=seed)

    base = train(protocol.arm(seed, False), tr, va, te, with_ssl=False)

    first = {}
    ssl_cfg = protocol.arm(seed, True)

    def grab(record, model, cm):
        if record["epoch"] == 1:
            first.update(epoch_losses(model, cm, tr, ssl_cfg))

    ssl = train(ssl_cfg, tr, va, te, with_ssl=True, on_epoch=grab)
    best = epoch_losses(ssl.model, ssl.contrastive, tr, ssl_cfg)

    W_b = base.model.table.weight.data
    W_s = ssl.model.table.weight.data
    counts = tr.feature_counts(sd.num_features)
    bounds = quantile_boundaries(instance_frequency(te.X, counts), protocol.num_buckets)
    rep_b = frequency_bucket_logloss(base.model, te, counts, bounds)
    rep_s = frequency_bucket_logloss(ssl.model, te, counts, bounds, baseline=base.model)
    return PairResult(
        seed=seed,
        base_stats=representation_stats(W_b, te.X, te.field_ranges),
        ssl_stats=representation_stats(W_s, te.X, te.field_ranges),
        base_auc=base.report.test_auc, ssl_auc=ssl.report.test_auc,
        losses_first=first, losses_best=best, best_epoch=ssl.report.best_epoch,
        boundaries=bounds,
        base_buckets=[b.logloss for b in rep_b.buckets],
        delta_buckets=[b.delta_logloss for b in rep_s.buckets],
        seconds=time.perf_counter() - t0,
    )
