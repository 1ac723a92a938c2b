"""The feature-representation table and per-instance embedding lookup."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from . import numcore as nc

TABLE_MAGIC = b"CL4E"
TABLE_VERSION = 1


@dataclass
class EmbeddingTable:
    weight: nc.Tensor                      # M x D parameter
    field_ranges: list[tuple[int, int]]

    def __post_init__(self):
        M = self.weight.shape[0]
        pos = 0
        for lo, hi in self.field_ranges:
            if lo != pos or hi <= lo:
                raise ValueError("field ranges must partition [0, M) contiguously")
            pos = hi
        if pos != M:
            raise ValueError(f"field ranges cover [0, {pos}) but M = {M}")
        if self.dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        self._lo = np.array([r[0] for r in self.field_ranges], dtype=np.int64)
        self._hi = np.array([r[1] for r in self.field_ranges], dtype=np.int64)

    @property
    def num_features(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @property
    def num_fields(self) -> int:
        return len(self.field_ranges)

    def field_of(self, index: np.ndarray) -> np.ndarray:
        return np.searchsorted(self._hi, index, side="right")

    def parameters(self) -> dict[str, nc.Tensor]:
        return {"embedding": self.weight}


def init_table(M: int, D: int, field_ranges: Sequence[tuple[int, int]] | None = None,
               scheme: str = "normal", seed: int = 0, std: float = 0.01) -> EmbeddingTable:
    if M < 1 or D < 1:
        raise ValueError("M and D must be >= 1")
    if field_ranges is None:
        field_ranges = [(0, M)]
    if scheme == "normal":
        w = np.random.default_rng(seed).normal(0.0, std, (M, D))
    elif scheme == "zeros":
        w = np.zeros((M, D))
    elif scheme == "xavier":
        bound = np.sqrt(6.0 / (M + D))
        w = np.random.default_rng(seed).uniform(-bound, bound, (M, D))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return EmbeddingTable(nc.parameter(w, name="embedding"), [tuple(r) for r in field_ranges])


def lookup(table: EmbeddingTable, instance: np.ndarray) -> nc.Tensor:
    """Gather rows for an F-vector (-> F x D) or a B x F batch (-> B x F x D)."""
    instance = np.asarray(instance, dtype=np.int64)
    if instance.shape[-1] != table.num_fields:
        raise IndexError(f"instance has {instance.shape[-1]} fields, table has {table.num_fields}")
    if ((instance < table._lo) | (instance >= table._hi)).any():
        raise IndexError("feature index outside its field range")
    return nc.gather(table.weight, instance)


def write_table(fh: BinaryIO, table: EmbeddingTable) -> None:
    M, D = table.weight.shape
    F = table.num_fields
    fh.write(TABLE_MAGIC + struct.pack("<IIII", TABLE_VERSION, M, F, D))
    fh.write(np.asarray(table.field_ranges, dtype="<u4").tobytes())
    fh.write(np.ascontiguousarray(table.weight.data, dtype="<f8").tobytes())


def read_table(fh: BinaryIO) -> EmbeddingTable:
    if fh.read(4) != TABLE_MAGIC:
        raise ValueError("not a CL4E embedding checkpoint")
    version, M, F, D = struct.unpack("<IIII", fh.read(16))
    if version != TABLE_VERSION:
        raise ValueError(f"unsupported embedding checkpoint version {version}")
    ranges = np.frombuffer(fh.read(8 * F), dtype="<u4").reshape(F, 2)
    w = np.frombuffer(fh.read(8 * M * D), dtype="<f8").reshape(M, D).astype(np.float64)
    return EmbeddingTable(nc.parameter(w, name="embedding"), [(int(a), int(b)) for a, b in ranges])
