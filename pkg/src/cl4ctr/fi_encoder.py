"""Shared feature-interaction encoder and the two projection heads.

Both views go through the SAME encoder parameters; each view has its own
projection head. Inputs are (B, F, D) or a single (F, D) instance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc

KINDS = ("transformer", "dnn", "crossnet")


@dataclass
class EncoderConfig:
    kind: str = "transformer"
    layers: int = 3
    heads: int = 2
    hidden: int | None = None      # transformer FFN width (default 4*D) or DNN width (default 400)
    layer_norm: bool = False

    def validate(self, dim: int) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}; expected one of {KINDS}")
        if self.layers < 1:
            raise ValueError("encoder needs at least one layer")
        if self.kind == "transformer" and (self.heads < 1 or dim % self.heads):
            raise ValueError(f"head count {self.heads} does not divide D={dim}")
        if self.hidden is not None and self.hidden < 1:
            raise ValueError("hidden width must be positive")


def _xavier(rng, fan_in, fan_out, name):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return nc.parameter(rng.uniform(-bound, bound, (fan_in, fan_out)), name=name)


def _zeros(shape, name):
    return nc.parameter(np.zeros(shape), name=name)


class _Batched:
    """Adds a leading batch axis for single-instance inputs."""

    @staticmethod
    def lift(E: nc.Tensor) -> tuple[nc.Tensor, bool]:
        if E.data.ndim == 2:
            return nc.reshape(E, (1,) + E.shape), True
        return E, False


def layer_norm(x: nc.Tensor, eps: float = 1e-6) -> nc.Tensor:
    mu = nc.mean(x, axis=-1, keepdims=True)
    c = nc.sub(x, mu)
    var = nc.mean(nc.square(c), axis=-1, keepdims=True)
    return nc.div(c, nc.sqrt(nc.add(var, nc.Tensor(eps))))


class TransformerEncoder:
    """Self-attention over field rows (no positional encoding), residual
    connections, per-row ReLU feed-forward. Output is flattened F*D."""

    def __init__(self, num_fields: int, dim: int, config: EncoderConfig, seed: int = 0):
        config.validate(dim)
        rng = np.random.default_rng(seed)
        self.F, self.D = num_fields, dim
        self.heads = config.heads
        self.layer_norm = config.layer_norm
        hidden = config.hidden or 4 * dim
        self.blocks = []
        for i in range(config.layers):
            p = f"enc.{i}"
            self.blocks.append({
                "wq": _xavier(rng, dim, dim, f"{p}.wq"),
                "wk": _xavier(rng, dim, dim, f"{p}.wk"),
                "wv": _xavier(rng, dim, dim, f"{p}.wv"),
                "wo": _xavier(rng, dim, dim, f"{p}.wo"),
                "w1": _xavier(rng, dim, hidden, f"{p}.w1"),
                "b1": _zeros(hidden, f"{p}.b1"),
                "w2": _xavier(rng, hidden, dim, f"{p}.w2"),
                "b2": _zeros(dim, f"{p}.b2"),
            })
        self.out_dim = num_fields * dim

    def attention(self, X: nc.Tensor, blk: dict, return_weights: bool = False):
        B, F, D = X.shape
        h = self.heads
        dk = D // h

        def split(t):
            return nc.transpose(nc.reshape(t, (B, F, h, dk)), (0, 2, 1, 3))

        q = split(nc.matmul(X, blk["wq"]))
        k = split(nc.matmul(X, blk["wk"]))
        v = split(nc.matmul(X, blk["wv"]))
        scores = nc.scale(nc.matmul(q, nc.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
        weights = nc.softmax(scores)
        ctx = nc.matmul(weights, v)
        ctx = nc.reshape(nc.transpose(ctx, (0, 2, 1, 3)), (B, F, D))
        out = nc.matmul(ctx, blk["wo"])
        return (out, weights) if return_weights else out

    def block(self, X: nc.Tensor, blk: dict) -> nc.Tensor:
        X = nc.add(X, self.attention(X, blk))
        if self.layer_norm:
            X = layer_norm(X)
        ff = nc.linear(nc.relu(nc.linear(X, blk["w1"], blk["b1"])), blk["w2"], blk["b2"])
        X = nc.add(X, ff)
        if self.layer_norm:
            X = layer_norm(X)
        return X

    def rows(self, E: nc.Tensor) -> nc.Tensor:
        """Encoded F x D rows before flattening."""
        X, single = _Batched.lift(E)
        for blk in self.blocks:
            X = self.block(X, blk)
        return nc.reshape(X, X.shape[1:]) if single else X

    def __call__(self, E: nc.Tensor) -> nc.Tensor:
        X = self.rows(E)
        return nc.reshape(X, X.shape[:-2] + (X.shape[-2] * X.shape[-1],))

    def parameters(self) -> dict[str, nc.Tensor]:
        return {t.name: t for blk in self.blocks for t in blk.values()}


class DNNEncoder:
    """ReLU MLP over the flattened embedding matrix."""

    def __init__(self, num_fields: int, dim: int, config: EncoderConfig, seed: int = 0):
        config.validate(dim)
        rng = np.random.default_rng(seed)
        width = config.hidden or 400
        self.weights, self.biases = [], []
        d = num_fields * dim
        for i in range(config.layers):
            self.weights.append(_xavier(rng, d, width, f"enc.{i}.w"))
            self.biases.append(_zeros(width, f"enc.{i}.b"))
            d = width
        self.out_dim = d

    def __call__(self, E: nc.Tensor) -> nc.Tensor:
        x = nc.reshape(E, E.shape[:-2] + (E.shape[-2] * E.shape[-1],))
        for w, b in zip(self.weights, self.biases):
            x = nc.relu(nc.linear(x, w, b))
        return x

    def parameters(self) -> dict[str, nc.Tensor]:
        return {t.name: t for t in self.weights + self.biases}


class CrossNetEncoder:
    """Cross layers x_{l+1} = x0 * (x_l W_l + b_l) + x_l on the flattened input."""

    def __init__(self, num_fields: int, dim: int, config: EncoderConfig, seed: int = 0):
        config.validate(dim)
        rng = np.random.default_rng(seed)
        n = num_fields * dim
        self.weights = [nc.parameter(rng.normal(0.0, 1.0 / n, (n, n)), name=f"enc.{i}.w")
                        for i in range(config.layers)]
        self.biases = [_zeros(n, f"enc.{i}.b") for i in range(config.layers)]
        self.out_dim = n

    def __call__(self, E: nc.Tensor) -> nc.Tensor:
        x0 = nc.reshape(E, E.shape[:-2] + (E.shape[-2] * E.shape[-1],))
        x = x0
        for w, b in zip(self.weights, self.biases):
            x = nc.add(nc.mul(x0, nc.linear(x, w, b)), x)
        return x

    def parameters(self) -> dict[str, nc.Tensor]:
        return {t.name: t for t in self.weights + self.biases}


def transformer_encode(E: nc.Tensor, encoder: TransformerEncoder) -> nc.Tensor:
    return encoder(E)


def dnn_encode(E: nc.Tensor, encoder: DNNEncoder) -> nc.Tensor:
    return encoder(E)


def crossnet_encode(E: nc.Tensor, encoder: CrossNetEncoder) -> nc.Tensor:
    return encoder(E)


def build_encoder(num_fields: int, dim: int, config: EncoderConfig, seed: int = 0):
    cls = {"transformer": TransformerEncoder, "dnn": DNNEncoder, "crossnet": CrossNetEncoder}
    config.validate(dim)
    return cls[config.kind](num_fields, dim, config, seed)


class ProjectionHead:
    """Single affine layer mapping the encoder output down to D."""

    def __init__(self, in_dim: int, out_dim: int, seed: int = 0, name: str = "proj"):
        rng = np.random.default_rng(seed)
        self.weight = _xavier(rng, in_dim, out_dim, f"{name}.w")
        self.bias = _zeros(out_dim, f"{name}.b")

    def __call__(self, h: nc.Tensor) -> nc.Tensor:
        if h.shape[-1] != self.weight.shape[0]:
            raise nc.ShapeError(f"projection expects input dim {self.weight.shape[0]}, got {h.shape[-1]}")
        return nc.linear(h, self.weight, self.bias)

    def parameters(self) -> dict[str, nc.Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}


def project(h: nc.Tensor, head: ProjectionHead) -> nc.Tensor:
    return head(h)


class ContrastiveModule:
    """Encoder shared by both views plus heads p1 and p2."""

    def __init__(self, num_fields: int, dim: int, config: EncoderConfig, seed: int = 0):
        self.config = config
        self.encoder = build_encoder(num_fields, dim, config, seed)
        self.head1 = ProjectionHead(self.encoder.out_dim, dim, seed + 1, "proj1")
        self.head2 = ProjectionHead(self.encoder.out_dim, dim, seed + 2, "proj2")

    def __call__(self, view1: nc.Tensor, view2: nc.Tensor) -> tuple[nc.Tensor, nc.Tensor]:
        if view1.data.ndim == 3 and view1.shape == view2.shape:
            # encoders act row by row, so one pass over both views stacked is exact
            B = view1.shape[0]
            h = self.encoder(nc.concat([view1, view2], axis=0))
            return self.head1(nc.slice_rows(h, 0, B)), self.head2(nc.slice_rows(h, B, 2 * B))
        return self.head1(self.encoder(view1)), self.head2(self.encoder(view2))

    def parameters(self) -> dict[str, nc.Tensor]:
        out = dict(self.encoder.parameters())
        out.update(self.head1.parameters())
        out.update(self.head2.parameters())
        return out
