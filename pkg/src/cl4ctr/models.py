"""Base CTR predictors: LR, FM, field-weighted FM and FM+DNN.

All logit functions accept a single instance (E: F x D) or a batch
(E: B x F x D) and return a scalar or a length-B vector of logits.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .embedding import EmbeddingTable, init_table, lookup, read_table, write_table

PREDICTOR_TAG = b"CL4P"
PREDICTOR_VERSION = 1
KINDS = ("lr", "fm", "fwfm", "fmdnn")


@dataclass
class PredictorConfig:
    kind: str = "fm"
    dnn_widths: tuple[int, ...] = (400, 400, 400, 1)
    dropout: float = 0.5
    linear: bool = True

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}; expected one of {KINDS}")
        if any(w <= 0 for w in self.dnn_widths) or self.dnn_widths[-1] != 1:
            raise ValueError("dnn widths must be positive and end in 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def fm_logit(E: nc.Tensor, linear: nc.Tensor | None = None, bias: nc.Tensor | float = 0.0) -> nc.Tensor:
    """bias + sum(linear) + 1/2 sum_d [(sum_f E_fd)^2 - sum_f E_fd^2]."""
    field_ax = E.data.ndim - 2
    sum_sq = nc.square(nc.sum_(E, axis=field_ax))
    sq_sum = nc.sum_(nc.square(E), axis=field_ax)
    out = nc.scale(nc.sum_(nc.sub(sum_sq, sq_sum), axis=-1), 0.5)
    return _first_order(out, linear, bias)


def fwfm_logit(E: nc.Tensor, r: nc.Tensor, linear: nc.Tensor | None = None,
               bias: nc.Tensor | float = 0.0) -> nc.Tensor:
    """bias + sum(linear) + sum_{i<j} r_ij <e_i, e_j>; ``r`` must be symmetric."""
    if not np.allclose(r.data, r.data.T, rtol=0, atol=1e-12):
        raise ValueError("field-pair weights must be symmetric")
    F = E.shape[-2]
    offdiag = 1.0 - np.eye(F)
    gram = nc.matmul(E, nc.transpose(E, _swap_last(E.data.ndim)))
    weighted = nc.mul(gram, nc.mask_mul(r, offdiag))
    out = nc.scale(nc.sum_(weighted, axis=(-2, -1)), 0.5)
    return _first_order(out, linear, bias)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _first_order(out: nc.Tensor, linear, bias) -> nc.Tensor:
    if linear is not None:
        out = nc.add(out, nc.sum_(linear, axis=-1))
    if isinstance(bias, nc.Tensor):
        return nc.add(out, bias)
    return nc.add(out, nc.Tensor(float(bias))) if bias else out


class MLP:
    """ReLU MLP; dropout after each hidden activation, plain affine output."""

    def __init__(self, in_dim: int, widths: Sequence[int], dropout: float = 0.0, seed: int = 0,
                 prefix: str = "mlp"):
        rng = np.random.default_rng(seed)
        self.dropout = dropout
        self.weights, self.biases = [], []
        d = in_dim
        for i, w in enumerate(widths):
            bound = np.sqrt(6.0 / (d + w))
            self.weights.append(nc.parameter(rng.uniform(-bound, bound, (d, w)), name=f"{prefix}.w{i}"))
            self.biases.append(nc.parameter(np.zeros(w), name=f"{prefix}.b{i}"))
            d = w
        self.out_dim = d

    def __call__(self, x: nc.Tensor, train: bool = False, rng=None) -> nc.Tensor:
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = nc.linear(x, w, b)
            if i < n - 1:
                x = nc.dropout(nc.relu(x), self.dropout, train, rng)
        return x

    def parameters(self) -> dict[str, nc.Tensor]:
        out = {}
        for w, b in zip(self.weights, self.biases):
            out[w.name] = w
            out[b.name] = b
        return out


def dnn_logit(x_flat: nc.Tensor, mlp: MLP, train: bool = False, rng=None) -> nc.Tensor:
    out = mlp(x_flat, train, rng)
    return nc.reshape(out, out.shape[:-1])


def predict_proba(logit) -> np.ndarray:
    z = logit.data if isinstance(logit, nc.Tensor) else logit
    return nc.stable_sigmoid(np.asarray(z, dtype=np.float64))


def bce_loss(logits: nc.Tensor, labels: np.ndarray) -> nc.Tensor:
    """Mean binary cross entropy in logit space: softplus(z) - y z."""
    y = np.asarray(labels, dtype=np.float64).reshape(logits.shape)
    return nc.mean(nc.sub(nc.softplus(logits), nc.mask_mul(logits, y)))


class CTRModel:
    """Embedding table plus one of the base predictors.

    ``forward`` is the inference path; it never touches contrastive-module
    parameters.
    """

    def __init__(self, table: EmbeddingTable, config: PredictorConfig, seed: int = 0):
        config.validate()
        self.table = table
        self.config = config
        M, F, D = table.num_features, table.num_fields, table.dim
        self.bias = nc.parameter(np.zeros(()), name="bias")
        self.linear = nc.parameter(np.zeros(M), name="linear") if (config.linear or config.kind == "lr") else None
        self.field_weights = None
        self.mlp = None
        if config.kind == "fwfm":
            self.field_weights = nc.parameter(1.0 - np.eye(F), name="field_weights")
        if config.kind == "fmdnn":
            self.mlp = MLP(F * D, config.dnn_widths, config.dropout, seed=seed, prefix="dnn")

    @classmethod
    def create(cls, field_ranges, dim: int, config: PredictorConfig, seed: int = 0,
               init_std: float = 0.01) -> "CTRModel":
        M = field_ranges[-1][1]
        table = init_table(M, dim, field_ranges, "normal", seed, init_std)
        return cls(table, config, seed=seed + 1)

    def parameters(self) -> dict[str, nc.Tensor]:
        out = {"embedding": self.table.weight, "bias": self.bias}
        if self.linear is not None:
            out["linear"] = self.linear
        if self.field_weights is not None:
            out["field_weights"] = self.field_weights
        if self.mlp is not None:
            out.update(self.mlp.parameters())
        return out

    def embed(self, X: np.ndarray) -> nc.Tensor:
        return lookup(self.table, X)

    def logits_from_embeddings(self, E: nc.Tensor, X: np.ndarray, train: bool = False, rng=None) -> nc.Tensor:
        lin = nc.gather(self.linear, X) if self.linear is not None else None
        kind = self.config.kind
        if kind == "lr":
            return _first_order(nc.Tensor(np.zeros(X.shape[:-1])), lin, self.bias)
        if kind == "fwfm":
            return fwfm_logit(E, self.field_weights, lin, self.bias)
        out = fm_logit(E, lin, self.bias)
        if kind == "fmdnn":
            flat = nc.reshape(E, E.shape[:-2] + (E.shape[-2] * E.shape[-1],))
            out = nc.add(out, dnn_logit(flat, self.mlp, train, rng))
        return out

    def forward(self, X: np.ndarray, train: bool = False, rng=None) -> nc.Tensor:
        return self.logits_from_embeddings(self.embed(X), X, train, rng)

    def predict(self, X: np.ndarray, batch_size: int = 8192) -> np.ndarray:
        out = []
        with nc.no_grad():
            for i in range(0, len(X), batch_size):
                out.append(predict_proba(self.forward(X[i:i + batch_size])))
        return np.concatenate(out) if out else np.zeros(0)

    # -- checkpointing ----------------------------------------------------

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        buf = io.BytesIO()
        write_table(buf, self.table)
        meta = {"config": {**asdict(self.config), "dnn_widths": list(self.config.dnn_widths)},
                "extra": extra or {}}
        arrays = {k: v.data for k, v in self.parameters().items() if k != "embedding"}
        write_arrays(buf, PREDICTOR_TAG, meta, arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "CTRModel":
        with Path(path).open("rb") as fh:
            table = read_table(fh)
            meta, arrays = read_arrays(fh, PREDICTOR_TAG)
        cfg = meta["config"]
        cfg["dnn_widths"] = tuple(cfg["dnn_widths"])
        model = cls(table, PredictorConfig(**cfg))
        params = model.parameters()
        for k, arr in arrays.items():
            if k not in params or params[k].shape != arr.shape:
                raise ValueError(f"checkpoint parameter {k!r} does not fit the model")
            params[k].data[...] = arr
        model.meta = meta.get("extra", {})
        return model


def write_arrays(fh, tag: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Tagged section: json header then named little-endian float64 arrays."""
    header = json.dumps(meta, sort_keys=True).encode()
    fh.write(tag + struct.pack("<III", PREDICTOR_VERSION, len(header), len(arrays)))
    fh.write(header)
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8", order="C")   # keeps 0-d shapes
        nb = name.encode()
        fh.write(struct.pack("<II", len(nb), arr.ndim) + nb)
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_arrays(fh, tag: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if fh.read(4) != tag:
        raise ValueError(f"missing {tag!r} section")
    version, hlen, n = struct.unpack("<III", fh.read(12))
    if version != PREDICTOR_VERSION:
        raise ValueError(f"unsupported section version {version}")
    meta = json.loads(fh.read(hlen))
    arrays = {}
    for _ in range(n):
        nlen, ndim = struct.unpack("<II", fh.read(8))
        name = fh.read(nlen).decode()
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return meta, arrays
