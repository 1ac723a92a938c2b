"""Joint training of a base CTR model with the contrastive module.

Each step: CTR loss on the batch, two masked views through the shared
encoder for the contrastive loss, alignment/uniformity over the batch's
distinct features, one Adam step over every parameter.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .augment import InstanceStream, MaskSpec, make_views
from .data import EncodedDataset, labeled_seed
from .fi_encoder import ContrastiveModule, EncoderConfig
from .metrics import evaluate_probas
from .models import CTRModel, PredictorConfig, bce_loss
from .ssl_loss import (BatchFieldIndex, contrastive_loss, feature_alignment, field_uniformity,
                       total_loss)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    embed_dim: int = 64
    batch_size: int = 1024
    lr: float = 1e-3
    max_epochs: int = 100
    alpha: float = 1.0
    beta: float = 0.01
    mask: MaskSpec = field(default_factory=MaskSpec)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    plateau_patience: int = 4
    plateau_factor: float = 10.0
    early_stop_patience: int = 8
    seed: int = 0
    init_std: float = 0.01
    ssl_normalize: bool = True
    ssl_full_vocab: bool = False
    grad_clip: float | None = None
    eval_seed: int = 12345
    track_frozen_ssl: bool = True

    def validate(self) -> None:
        errors = []
        for name in ("embed_dim", "batch_size", "max_epochs", "plateau_patience", "early_stop_patience"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.lr <= 0:
            errors.append("lr must be positive")
        if self.alpha < 0 or self.beta < 0:
            errors.append("alpha and beta must be nonnegative")
        if self.plateau_factor <= 1:
            errors.append("plateau_factor must exceed 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            errors.append("grad_clip must be positive")
        for sub in (self.mask.validate, lambda: self.encoder.validate(self.embed_dim), self.predictor.validate):
            try:
                sub()
            except ValueError as exc:
                errors.append(str(exc))
        if errors:
            raise ValueError("; ".join(errors))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["predictor"]["dnn_widths"] = list(self.predictor.dnn_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        mask = MaskSpec(**d.pop("mask", {}))
        enc = EncoderConfig(**d.pop("encoder", {}))
        pred = dict(d.pop("predictor", {}))
        if "dnn_widths" in pred:
            pred["dnn_widths"] = tuple(pred["dnn_widths"])
        return cls(mask=mask, encoder=enc, predictor=PredictorConfig(**pred), **d)

    @property
    def ssl_frozen(self) -> bool:
        return self.alpha == 0 and self.beta == 0


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

class PlateauScheduler:
    """Divide the LR by ``factor`` after ``patience`` epochs without a new
    best metric. The counter resets on improvement and after a reduction."""

    def __init__(self, lr: float, patience: int = 4, factor: float = 10.0):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = -np.inf
        self.bad = 0

    def step(self, metric: float) -> bool:
        if metric > self.best:
            self.best = metric
            self.bad = 0
            return False
        self.bad += 1
        if self.bad >= self.patience:
            self.lr /= self.factor
            self.bad = 0
            return True
        return False


def reduce_lr_on_plateau(history: Sequence[float], lr: float, patience: int = 4,
                         factor: float = 10.0) -> tuple[float, list[int]]:
    """Replay a validation-AUC history; returns final LR and 1-based reduction epochs."""
    if not len(history):
        raise ValueError("history is empty")
    sched = PlateauScheduler(lr, patience, factor)
    fired = [e for e, m in enumerate(history, start=1) if sched.step(m)]
    return sched.lr, fired


def best_epoch(history: Sequence[float]) -> int:
    """1-based argmax, first occurrence on ties."""
    return int(np.argmax(np.asarray(history))) + 1


def early_stop(history: Sequence[float], patience: int = 8) -> tuple[bool, int]:
    """Stop once ``patience`` epochs have passed without beating the best."""
    if not len(history):
        raise ValueError("history is empty")
    b = best_epoch(history)
    return len(history) - b >= patience, b


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    lr_reductions: list[int] = field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0
    early_stopped: bool = False
    test_auc: float | None = None
    test_logloss: float | None = None
    ssl_frozen: list[str] = field(default_factory=list)
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def series(self, key: str) -> np.ndarray:
        return np.array([e[key] if e[key] is not None else np.nan for e in self.epochs], dtype=float)


@dataclass
class TrainResult:
    report: TrainReport
    model: CTRModel
    contrastive: ContrastiveModule | None


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def build(config: TrainConfig, field_ranges, with_ssl: bool = True) -> tuple[CTRModel, ContrastiveModule | None]:
    model = CTRModel.create(field_ranges, config.embed_dim, config.predictor,
                            seed=labeled_seed(config.seed, "model") % 2**32, init_std=config.init_std)
    cm = None
    if with_ssl:
        cm = ContrastiveModule(len(field_ranges), config.embed_dim, config.encoder,
                               seed=labeled_seed(config.seed, "encoder") % 2**32)
    return model, cm


class _Step:
    """Loss for one batch; shared by training and evaluation-mode reporting."""

    def __init__(self, model: CTRModel, cm: ContrastiveModule | None, config: TrainConfig, field_ranges):
        self.model, self.cm, self.config = model, cm, config
        self.full_index = BatchFieldIndex.full(field_ranges) if config.ssl_full_vocab else None

    def __call__(self, X, y, ids, key: int, train: bool, grad_terms: set[str]):
        cfg = self.config
        E = self.model.embed(X)
        drop = InstanceStream(labeled_seed(key, "dropout"), ids) if train else None
        logits = self.model.logits_from_embeddings(E, X, train=train, rng=drop)
        l_ctr = bce_loss(logits, y)
        l_cl = l_a = l_u = None
        if self.cm is not None and ("l_cl" in grad_terms or cfg.track_frozen_ssl):
            with _grad_if("l_cl" in grad_terms):
                views = make_views(E, cfg.mask, InstanceStream(labeled_seed(key, "mask"), ids))
                l_cl = contrastive_loss(*self.cm(*views))
        if "l_a" in grad_terms or cfg.track_frozen_ssl:
            with _grad_if("l_a" in grad_terms):
                index = self.full_index or BatchFieldIndex.from_batch(X)
                l_a = feature_alignment(index, self.model.table, cfg.ssl_normalize)
                l_u = field_uniformity(index, self.model.table, cfg.ssl_normalize)
        alpha = cfg.alpha if "l_cl" in grad_terms else 0.0
        beta = cfg.beta if "l_a" in grad_terms else 0.0
        return total_loss(l_ctr, l_cl, l_a, l_u, alpha, beta)


class _grad_if:
    def __init__(self, enabled: bool):
        self.ctx = None if enabled else nc.no_grad()

    def __enter__(self):
        if self.ctx is not None:
            self.ctx.__enter__()

    def __exit__(self, *exc):
        if self.ctx is not None:
            return self.ctx.__exit__(*exc)
        return False


def _grad_terms(config: TrainConfig, cm) -> set[str]:
    terms = set()
    if config.alpha > 0 and cm is not None:
        terms.add("l_cl")
    if config.beta > 0:
        terms.update(("l_a", "l_u"))
    return terms


def _clip(grads: dict, max_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        for g in grads.values():
            g *= max_norm / total


def epoch_losses(model: CTRModel, cm: ContrastiveModule | None, dataset: EncodedDataset,
                 config: TrainConfig, eval_seed: int | None = None) -> dict[str, float]:
    """Evaluation-mode means of L_ctr, L_cl, L_a, L_u over all batches.

    Dropout is off; masks are still drawn, from a fixed evaluation stream.
    """
    seed = config.eval_seed if eval_seed is None else eval_seed
    cfg = TrainConfig.from_dict({**config.to_dict(), "track_frozen_ssl": True})
    step = _Step(model, cm, cfg, dataset.field_ranges)
    sums = {"l_ctr": 0.0, "l_cl": 0.0, "l_a": 0.0, "l_u": 0.0}
    nb = 0
    n = 0
    with nc.no_grad():
        for start in range(0, len(dataset), config.batch_size):
            X = dataset.X[start:start + config.batch_size]
            y = dataset.y[start:start + config.batch_size]
            ids = np.arange(start, start + len(X))
            b = step(X, y, ids, labeled_seed(seed, "eval"), False, set())
            w = len(X)
            sums["l_ctr"] += b.l_ctr * w
            sums["l_cl"] += b.l_cl * w
            sums["l_a"] += b.l_a
            sums["l_u"] += b.l_u
            n += w
            nb += 1
    return {"l_ctr": sums["l_ctr"] / n, "l_cl": sums["l_cl"] / n if cm is not None else None,
            "l_a": sums["l_a"] / nb, "l_u": sums["l_u"] / nb}


def train(config: TrainConfig, train_set: EncodedDataset, val_set: EncodedDataset,
          test_set: EncodedDataset | None = None, with_ssl: bool = True,
          on_epoch=None) -> TrainResult:
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be nonempty")
    ranges = train_set.field_ranges
    if ranges is None:
        raise ValueError("datasets must carry field ranges")
    for ds in (val_set, test_set):
        if ds is not None and ds.field_ranges is not None and list(ds.field_ranges) != list(ranges):
            raise ValueError("datasets do not share a schema")

    model, cm = build(config, ranges, with_ssl)
    params = dict(model.parameters())
    if cm is not None:
        params.update(cm.parameters())
    opt = nc.Adam(params, lr=config.lr)
    sched = PlateauScheduler(config.lr, config.plateau_patience, config.plateau_factor)
    terms = _grad_terms(config, cm)
    step = _Step(model, cm, config, ranges)
    param_list = list(params.values())

    report = TrainReport(config=config.to_dict())
    report.ssl_frozen = sorted({"l_cl", "l_a", "l_u"} - terms)
    history: list[float] = []
    best_state = None

    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng(labeled_seed(config.seed, "shuffle", epoch)).permutation(len(train_set))
        sums = {"l_ctr": 0.0, "l_cl": 0.0, "l_a": 0.0, "l_u": 0.0}
        seen = {"l_cl": False, "l_a": False}
        n = nb = 0
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            ids = order[start:start + config.batch_size]
            X, y = train_set.X[ids], train_set.y[ids]
            key = labeled_seed(config.seed, "step", epoch)
            try:
                bundle = step(X, y, ids, key, True, terms)
                if not np.isfinite(bundle.total):
                    raise nc.NonFiniteError("loss")
                grads = nc.backward(bundle.graph, param_list)
            except nc.NonFiniteError as exc:
                raise TrainingDiverged(
                    f"non-finite value at epoch {epoch} batch {bi} ({exc}); "
                    f"lr={opt.lr:g}; consider grad_clip or a lower lr") from exc
            if config.grad_clip is not None:
                _clip(grads, config.grad_clip)
            opt.step(grads)
            w = len(ids)
            sums["l_ctr"] += bundle.l_ctr * w
            sums["l_cl"] += bundle.l_cl * w
            sums["l_a"] += bundle.l_a
            sums["l_u"] += bundle.l_u
            seen["l_cl"] |= cm is not None and (config.track_frozen_ssl or "l_cl" in terms)
            seen["l_a"] |= config.track_frozen_ssl or "l_a" in terms
            n += w
            nb += 1

        val = evaluate_probas(model.predict(val_set.X), val_set.y)
        val_auc = val.auc if val.auc is not None else 0.5
        record = {
            "epoch": epoch,
            "l_ctr": sums["l_ctr"] / n,
            "l_cl": sums["l_cl"] / n if seen["l_cl"] else None,
            "l_a": sums["l_a"] / nb if seen["l_a"] else None,
            "l_u": sums["l_u"] / nb if seen["l_a"] else None,
            "val_auc": val_auc,
            "val_logloss": val.logloss,
            "lr": opt.lr,
        }
        report.epochs.append(record)
        history.append(val_auc)
        log.info("epoch %d %s", epoch, record)
        if on_epoch is not None:
            on_epoch(record, model, cm)

        if val_auc > max(history[:-1], default=-np.inf):
            best_state = {k: t.data.copy() for k, t in params.items()}
        if sched.step(val_auc):
            report.lr_reductions.append(epoch)
            opt.lr = sched.lr
        stop, report.best_epoch = early_stop(history, config.early_stop_patience)
        report.stop_epoch = epoch
        if stop:
            report.early_stopped = True
            break

    for k, t in params.items():
        t.data[...] = best_state[k]
    if test_set is not None and len(test_set):
        res = evaluate_probas(model.predict(test_set.X), test_set.y)
        report.test_auc, report.test_logloss = res.auc, res.logloss
    return TrainResult(report, model, cm)
