"""Embedding perturbations producing two views of an instance.

``p`` is always the fraction MASKED. Kept entries pass through untouched
(no rescaling); masked entries become exact zeros, so their adjoints are
zero too.

Every operator accepts E of shape (F, D) or (B, F, D) and any ``rng`` with
a numpy-style ``random(size)`` method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc

METHODS = ("random", "feature", "dimension")

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _splitmix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on a uint64 array (array arithmetic wraps mod 2^64)."""
    x = x + np.uint64(_GOLDEN)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_M1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_M2)
    return x ^ (x >> np.uint64(31))


def _splitmix_int(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * _M1) & _MASK64
    x = ((x ^ (x >> 27)) * _M2) & _MASK64
    return x ^ (x >> 31)


class InstanceStream:
    """Counter-based uniforms keyed by (key, instance id, call, element).

    The draws for an instance depend only on its id and the call number,
    never on which other instances share the batch.
    """

    def __init__(self, key: int, ids: np.ndarray):
        self.key = key & _MASK64
        self.ids = np.asarray(ids, dtype=np.uint64)
        self._base = _splitmix(self.ids ^ np.uint64(self.key))
        self.calls = 0

    def random(self, size) -> np.ndarray:
        size = tuple(size)
        if not size or size[0] != self.ids.size:
            raise ValueError(f"leading dimension must be the batch size {self.ids.size}")
        per = int(np.prod(size[1:])) if len(size) > 1 else 1
        k = np.uint64(_splitmix_int(self.key ^ ((self.calls * _M2) & _MASK64)))
        x = _splitmix((self._base ^ k)[:, None] + np.arange(per, dtype=np.uint64)[None, :])
        self.calls += 1
        return ((x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)).reshape(size)


@dataclass
class MaskSpec:
    method: str = "random"
    p: float = 0.4

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown mask method {self.method!r}; expected one of {METHODS}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("mask proportion must lie in [0, 1]")


def random_mask(E: nc.Tensor, p: float, rng) -> nc.Tensor:
    keep = rng.random(E.shape) >= p
    return nc.mask_mul(E, keep)


def num_masked_fields(p: float, F: int) -> int:
    return int(math.floor(p * F + 1e-9))


def feature_mask(E: nc.Tensor, p: float, rng) -> nc.Tensor:
    """Zero exactly floor(p*F) uniformly chosen field rows."""
    F = E.shape[-2]
    L = num_masked_fields(p, F)
    u = rng.random(E.shape[:-1])
    if L == 0:
        return E
    order = np.argsort(u, axis=-1, kind="stable")
    keep = np.ones(E.shape[:-1])
    np.put_along_axis(keep, order[..., :L], 0.0, axis=-1)
    return nc.mask_mul(E, keep[..., None])


def dimension_mask(E: nc.Tensor, p: float, rng) -> nc.Tensor:
    """One Bernoulli keep-vector over D shared by every field row."""
    shape = E.shape[:-2] + (1, E.shape[-1])
    keep = rng.random(shape) >= p
    return nc.mask_mul(E, keep)


_OPS = {"random": random_mask, "feature": feature_mask, "dimension": dimension_mask}


def perturb(E: nc.Tensor, spec: MaskSpec, rng) -> nc.Tensor:
    return _OPS[spec.method](E, spec.p, rng)


def make_views(E: nc.Tensor, spec: MaskSpec, rng) -> tuple[nc.Tensor, nc.Tensor]:
    """Two views with the same method and p, masks drawn independently."""
    spec.validate()
    return perturb(E, spec, rng), perturb(E, spec, rng)
