"""Self-supervised signals: view contrastive loss, feature alignment, field
uniformity, and their weighted combination with the CTR loss.

Alignment and uniformity run over the distinct features of the current batch
(or over the whole vocabulary via :meth:`BatchFieldIndex.full`). Pairs are
ordered, so each unordered pair counts twice; normalised losses divide by the
ordered-pair count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .embedding import EmbeddingTable

FULL_VOCAB_LIMIT = 20_000
ZERO_NORM = 1e-12


@dataclass
class BatchFieldIndex:
    """Distinct global feature indices present in a batch, grouped by field."""

    per_field: list[np.ndarray]
    batch_size: int

    def __post_init__(self):
        self.index = np.concatenate(self.per_field).astype(np.int64)
        self.field = np.concatenate([np.full(len(ix), f) for f, ix in enumerate(self.per_field)]).astype(np.int64)
        self.counts = np.array([len(ix) for ix in self.per_field], dtype=np.int64)
        self._S = None

    @classmethod
    def from_batch(cls, X: np.ndarray) -> "BatchFieldIndex":
        X = np.asarray(X)
        return cls([np.unique(X[:, f]) for f in range(X.shape[1])], X.shape[0])

    @classmethod
    def full(cls, field_ranges) -> "BatchFieldIndex":
        M = field_ranges[-1][1]
        if M > FULL_VOCAB_LIMIT:
            raise ValueError(f"full-vocabulary mode limited to M <= {FULL_VOCAB_LIMIT}, got {M}")
        return cls([np.arange(lo, hi) for lo, hi in field_ranges], 0)

    @property
    def num_fields(self) -> int:
        return len(self.per_field)

    def _onehot(self) -> np.ndarray:
        if self._S is None:
            self._S = np.zeros((self.num_fields, self.index.size))
            self._S[self.field, np.arange(self.index.size)] = 1.0
        return self._S

    def alignment_pairs(self) -> int:
        return int((self.counts * (self.counts - 1)).sum())

    def uniformity_pairs(self) -> int:
        n = self.index.size
        return int(n * n - (self.counts ** 2).sum())


def contrastive_loss(H1: nc.Tensor, H2: nc.Tensor) -> nc.Tensor:
    """(1/B) sum_i ||h_i1 - h_i2||^2."""
    if H1.shape != H2.shape:
        raise nc.ShapeError(f"view shapes differ: {H1.shape} vs {H2.shape}")
    d = nc.sub(H1, H2)
    per_row = nc.sum_(nc.square(d), axis=-1)
    return nc.mean(per_row)


def feature_alignment(index: BatchFieldIndex, table: EmbeddingTable | nc.Tensor,
                      normalize: bool = True) -> nc.Tensor:
    """sum_f sum_{i != j in field f} ||e_i - e_j||^2.

    Uses sum_{i,j} ||x_i - x_j||^2 = 2 n sum_i ||x_i - mean||^2 per field.
    """
    weight = table.weight if isinstance(table, EmbeddingTable) else table
    pairs = index.alignment_pairs()
    if pairs == 0:
        return nc.Tensor(0.0)
    X = nc.gather(weight, index.index)
    inv_n = 1.0 / np.maximum(index.counts, 1)
    means = nc.mask_mul(nc.matmul(nc.Tensor(index._onehot()), X), inv_n[:, None])
    centered = nc.sub(X, nc.gather(means, index.field))
    row_sq = nc.sum_(nc.square(centered), axis=-1)
    w = 2.0 * index.counts[index.field]
    if normalize:
        w = w / pairs
    return nc.sum_(nc.mask_mul(row_sq, w))


def field_uniformity(index: BatchFieldIndex, table: EmbeddingTable | nc.Tensor,
                     normalize: bool = True) -> nc.Tensor:
    """sum over ordered cross-field pairs of cos(e_i, e_j).

    Uses ||sum_i u_i||^2 - sum_f ||sum_{i in f} u_i||^2 on unit vectors u.
    Embeddings with norm <= 1e-12 contribute 0.
    """
    weight = table.weight if isinstance(table, EmbeddingTable) else table
    pairs = index.uniformity_pairs()
    if pairs == 0:
        return nc.Tensor(0.0)
    X = nc.gather(weight, index.index)
    sq = nc.sum_(nc.square(X), axis=-1, keepdims=True)
    valid = (np.sqrt(sq.data) > ZERO_NORM).astype(np.float64)
    norms = nc.sqrt(nc.add(sq, nc.Tensor(1.0 - valid)))
    U = nc.mask_mul(nc.div(X, norms), valid)
    total = nc.sum_(U, axis=0)
    per_field = nc.matmul(nc.Tensor(index._onehot()), U)
    out = nc.sub(nc.sum_(nc.square(total)), nc.sum_(nc.square(per_field)))
    return nc.scale(out, 1.0 / pairs) if normalize else out


@dataclass
class LossBundle:
    l_ctr: float
    l_cl: float
    l_a: float
    l_u: float
    total: float
    alpha: float
    beta: float
    graph: nc.Tensor | None = None

    def as_dict(self) -> dict[str, float]:
        return {"l_ctr": self.l_ctr, "l_cl": self.l_cl, "l_a": self.l_a, "l_u": self.l_u,
                "l_total": self.total}


def total_loss(l_ctr, l_cl=None, l_a=None, l_u=None, alpha: float = 1.0, beta: float = 0.01) -> LossBundle:
    """L_ctr + alpha * L_cl + beta * (L_a + L_u).

    Terms may be Tensors or floats; a zero weight drops its terms from the
    graph entirely. Missing terms count as 0.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be nonnegative")

    def val(t):
        if t is None:
            return 0.0
        return t.item() if isinstance(t, nc.Tensor) else float(t)

    graph = l_ctr if isinstance(l_ctr, nc.Tensor) else nc.Tensor(float(l_ctr))
    if alpha > 0 and isinstance(l_cl, nc.Tensor):
        graph = nc.add(graph, nc.scale(l_cl, alpha))
    if beta > 0:
        au = [t for t in (l_a, l_u) if isinstance(t, nc.Tensor)]
        if au:
            s = au[0] if len(au) == 1 else nc.add(au[0], au[1])
            graph = nc.add(graph, nc.scale(s, beta))
    vals = [val(t) for t in (l_ctr, l_cl, l_a, l_u)]
    total = vals[0] + alpha * vals[1] + beta * (vals[2] + vals[3])
    return LossBundle(*vals, total=total, alpha=alpha, beta=beta, graph=graph)
