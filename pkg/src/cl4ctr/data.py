"""Multi-field categorical data: vocabularies, encoding, frequency CDFs,
splits, the binary record format, and a Zipf long-tail generator."""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

OOV_TOKEN = "<oov>"
DATASET_MAGIC = b"CL4D"
DATASET_VERSION = 1


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Schema:
    fields: tuple[str, ...]
    label: str = "label"

    def __post_init__(self):
        if len(self.fields) < 2:
            raise DataError("a schema needs at least 2 fields")
        if len(set(self.fields)) != len(self.fields):
            raise DataError("field names must be unique")
        if self.label in self.fields:
            raise DataError("label column cannot also be a field")

    @property
    def num_fields(self) -> int:
        return len(self.fields)


@dataclass
class Vocabulary:
    """Per-field token maps over one contiguous global index range each.

    Index ``offsets[f]`` is field f's OOV slot; known tokens follow it in
    lexicographic order.
    """

    schema: Schema
    tokens: list[list[str]]          # per field, position 0 is OOV_TOKEN
    counts: np.ndarray               # per global index, training occurrences
    min_count: int = 1
    _maps: list[dict[str, int]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.offsets = np.concatenate([[0], np.cumsum([len(t) for t in self.tokens])]).astype(np.int64)
        self._maps = [{tok: int(self.offsets[f]) + i for i, tok in enumerate(toks)}
                      for f, toks in enumerate(self.tokens)]

    @property
    def num_features(self) -> int:
        return int(self.offsets[-1])

    @property
    def field_sizes(self) -> list[int]:
        return [len(t) for t in self.tokens]

    @property
    def field_ranges(self) -> list[tuple[int, int]]:
        return [(int(self.offsets[f]), int(self.offsets[f + 1])) for f in range(len(self.tokens))]

    def oov_index(self, f: int) -> int:
        return int(self.offsets[f])

    def field_of(self, index: int) -> int:
        return int(np.searchsorted(self.offsets, index, side="right") - 1)

    def encode(self, row: Mapping[str, str]) -> np.ndarray:
        out = np.empty(len(self.tokens), dtype=np.int64)
        for f, name in enumerate(self.schema.fields):
            if name not in row:
                raise DataError(f"row missing field {name!r}")
            out[f] = self._maps[f].get(str(row[name]), int(self.offsets[f]))
        return out

    def decode(self, instance: Sequence[int]) -> dict[str, str]:
        row = {}
        for f, idx in enumerate(instance):
            lo = int(self.offsets[f])
            row[self.schema.fields[f]] = self.tokens[f][int(idx) - lo]
        return row

    def to_json(self) -> dict:
        return {"fields": list(self.schema.fields), "label": self.schema.label,
                "min_count": self.min_count, "tokens": self.tokens,
                "counts": self.counts.astype(int).tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(Schema(tuple(obj["fields"]), obj["label"]), [list(t) for t in obj["tokens"]],
                   np.asarray(obj["counts"], dtype=np.int64), obj.get("min_count", 1))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_vocabulary(rows: Iterable[Mapping[str, str]], schema: Schema, min_count: int = 1) -> Vocabulary:
    if min_count < 0:
        raise DataError("min_count must be nonnegative")
    counters = [Counter() for _ in schema.fields]
    n = 0
    for n, row in enumerate(rows, start=1):
        for f, name in enumerate(schema.fields):
            if name not in row:
                raise DataError(f"row {n} missing field {name!r}")
            counters[f][str(row[name])] += 1
    if n == 0:
        raise DataError("cannot build a vocabulary from no rows")
    tokens, counts = [], []
    for c in counters:
        kept = sorted(t for t, k in c.items() if k >= min_count and t != OOV_TOKEN)
        kept_set = set(kept)
        oov = sum(k for t, k in c.items() if t not in kept_set)
        tokens.append([OOV_TOKEN] + kept)
        counts.extend([oov] + [c[t] for t in kept])
    return Vocabulary(schema, tokens, np.asarray(counts, dtype=np.int64), min_count)


@dataclass
class EncodedDataset:
    """``X[i, f]`` is the global feature index of instance i in field f."""

    X: np.ndarray
    y: np.ndarray
    field_ranges: list[tuple[int, int]] | None = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.int64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DataError("X must be N x F and match y")
        if self.y.size and not np.isin(self.y, (0, 1)).all():
            raise DataError("labels must be 0/1")
        if self.field_ranges is not None:
            lo = np.array([r[0] for r in self.field_ranges])
            hi = np.array([r[1] for r in self.field_ranges])
            if self.X.size and ((self.X < lo).any() or (self.X >= hi).any()):
                raise DataError("feature index outside its field range")

    def __len__(self) -> int:
        return int(self.X.shape[0])

    @property
    def num_fields(self) -> int:
        return int(self.X.shape[1])

    def subset(self, idx: np.ndarray) -> "EncodedDataset":
        return EncodedDataset(self.X[idx], self.y[idx], self.field_ranges)

    def feature_counts(self, num_features: int) -> np.ndarray:
        return np.bincount(self.X.reshape(-1), minlength=num_features)


def encode_rows(rows: Iterable[Mapping[str, str]], vocab: Vocabulary) -> EncodedDataset:
    X, y = [], []
    label = vocab.schema.label
    for n, row in enumerate(rows, start=1):
        X.append(vocab.encode(row))
        try:
            y.append(int(row[label]))
        except (KeyError, ValueError) as exc:
            raise DataError(f"row {n}: bad or missing label") from exc
    if not X:
        return EncodedDataset(np.zeros((0, vocab.schema.num_fields), np.int64), np.zeros(0, np.int64),
                              vocab.field_ranges)
    return EncodedDataset(np.stack(X), np.asarray(y), vocab.field_ranges)


def read_delimited(path: str | Path, delimiter: str | None = None,
                   label: str = "label") -> tuple[Schema, list[dict[str, str]]]:
    """Read a header-first delimited file; every non-label column is a field.

    Raises DataError naming the first malformed line.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        head = fh.readline()
        if delimiter is None:
            delimiter = "\t" if head.count("\t") > head.count(",") else ","
        header = next(csv.reader([head], delimiter=delimiter))
        header = [h.strip() for h in header]
        if label not in header:
            raise DataError(f"{path}: no label column {label!r} in header")
        schema = Schema(tuple(h for h in header if h != label), label)
        rows = []
        for lineno, parts in enumerate(csv.reader(fh, delimiter=delimiter), start=2):
            if not parts:
                continue
            if len(parts) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(parts)}")
            row = dict(zip(header, (p.strip() for p in parts)))
            if row[label] not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {row[label]!r}")
            rows.append(row)
    return schema, rows


# ---------------------------------------------------------------------------
# frequency statistics
# ---------------------------------------------------------------------------

@dataclass
class FrequencyCDF:
    thresholds: np.ndarray
    fractions: np.ndarray

    def points(self) -> list[tuple[int, float]]:
        return list(zip(self.thresholds.tolist(), self.fractions.tolist()))

    def at(self, threshold: float) -> float:
        """Fraction of features with count <= threshold."""
        i = np.searchsorted(self.thresholds, threshold, side="right")
        return 0.0 if i == 0 else float(self.fractions[i - 1])

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "cumulative_fraction"])
            for t, frac in self.points():
                w.writerow([t, repr(frac)])


def frequency_cdf(counts: Vocabulary | np.ndarray, include_oov: bool = False) -> FrequencyCDF:
    """Empirical CDF of feature occurrence counts.

    OOV slots are excluded by default since they are not real features.
    """
    if isinstance(counts, Vocabulary):
        c = counts.counts
        if not include_oov:
            keep = np.ones(c.size, bool)
            keep[counts.offsets[:-1]] = False
            c = c[keep]
    else:
        c = np.asarray(counts)
    if c.size == 0:
        return FrequencyCDF(np.zeros(0, np.int64), np.zeros(0))
    values, n = np.unique(c, return_counts=True)
    frac = np.cumsum(n) / c.size
    frac[-1] = 1.0
    return FrequencyCDF(values, frac)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split(dataset: EncodedDataset, ratios: Sequence[float] = (0.8, 0.1, 0.1),
          seed: int = 0) -> tuple[EncodedDataset, EncodedDataset, EncodedDataset]:
    if len(ratios) != 3 or min(ratios) <= 0:
        raise DataError("need three positive ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError("ratios must sum to 1")
    n = len(dataset)
    if n < 3:
        raise DataError("need at least 3 instances to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(max(n_train, 1), n - 2)
    n_val = min(max(n_val, 1), n - n_train - 1)
    parts = np.split(perm, [n_train, n_train + n_val])
    return tuple(dataset.subset(np.sort(p)) for p in parts)


# ---------------------------------------------------------------------------
# binary record file
# ---------------------------------------------------------------------------

def save_dataset(dataset: EncodedDataset, path: str | Path) -> None:
    n, f = dataset.X.shape
    rec = np.dtype([("x", "<u4", (f,)), ("y", "u1")])
    arr = np.empty(n, dtype=rec)
    arr["x"] = dataset.X
    arr["y"] = dataset.y
    with Path(path).open("wb") as fh:
        fh.write(DATASET_MAGIC + struct.pack("<III", DATASET_VERSION, f, n))
        fh.write(arr.tobytes())


def load_dataset(path: str | Path, field_ranges=None) -> EncodedDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != DATASET_MAGIC:
        raise DataError(f"{path}: not a CL4D dataset file")
    version, f, n = struct.unpack("<III", raw[4:16])
    if version != DATASET_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    rec = np.dtype([("x", "<u4", (f,)), ("y", "u1")])
    arr = np.frombuffer(raw, dtype=rec, count=n, offset=16)
    return EncodedDataset(arr["x"].astype(np.int64), arr["y"].astype(np.int64), field_ranges)


# ---------------------------------------------------------------------------
# synthetic long-tail data
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    num_fields: int = 6
    features_per_field: int = 500
    zipf_exponent: float = 1.2
    num_instances: int = 200_000
    rank: int = 4                    # latent rank of the hidden pairwise weights
    weight_scale: float = 1.0
    noise: float = 0.0               # std of the logit noise
    bias: float = 0.0
    seed: int = 0
    weight_seed: int | None = None   # defaults to seed

    def validate(self) -> None:
        if self.num_fields < 2:
            raise DataError("num_fields must be >= 2")
        if self.features_per_field < 2:
            raise DataError("features_per_field must be >= 2")
        if self.num_instances < 1:
            raise DataError("num_instances must be >= 1")
        if self.zipf_exponent < 0 or self.noise < 0 or self.rank < 1:
            raise DataError("zipf_exponent, noise must be >= 0 and rank >= 1")


def zipf_pmf(n: int, s: float) -> np.ndarray:
    p = np.arange(1, n + 1, dtype=np.float64) ** -s
    return p / p.sum()


@dataclass
class SynthDataset:
    data: EncodedDataset
    factors: np.ndarray       # (F, features_per_field, rank) hidden factors
    logits: np.ndarray        # noiseless logits per instance
    config: SynthConfig

    @property
    def field_ranges(self):
        return self.data.field_ranges

    @property
    def num_features(self) -> int:
        return self.config.num_fields * self.config.features_per_field


def synth_generate(config: SynthConfig) -> SynthDataset:
    """Zipf-distributed fields with a low-rank pairwise logit model.

    Field f occupies global indices [f*K, (f+1)*K). Within a field, rank r
    (0-based, in a per-field shuffled order) has probability proportional to
    (r+1)^-s. The label is Bernoulli(sigmoid(bias + sum_{i<j} <u_i, u_j> + noise)).
    """
    config.validate()
    F, K, N = config.num_fields, config.features_per_field, config.num_instances
    wseed = config.seed if config.weight_seed is None else config.weight_seed
    wrng = np.random.default_rng([wseed, 0x5EED])
    rng = np.random.default_rng([config.seed, 0xDA7A])
    factors = wrng.normal(0.0, config.weight_scale / np.sqrt(config.rank * (F - 1) / 2), (F, K, config.rank))
    pmf = zipf_pmf(K, config.zipf_exponent)
    ranks = rng.choice(K, size=(N, F), p=pmf)
    perms = np.stack([wrng.permutation(K) for _ in range(F)])
    local = perms[np.arange(F)[None, :], ranks]
    U = factors[np.arange(F)[None, :], local]          # (N, F, rank)
    S = U.sum(axis=1)
    logits = config.bias + 0.5 * ((S * S).sum(-1) - (U * U).sum(axis=(1, 2)))
    if np.isinf(config.noise):
        # infinite logit noise: the label is a fair coin
        y = rng.integers(0, 2, N)
    else:
        z = logits + (rng.normal(0.0, config.noise, N) if config.noise > 0 else 0.0)
        y = (rng.random(N) < 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))).astype(np.int64)
    X = local + (np.arange(F) * K)[None, :]
    ranges = [(f * K, (f + 1) * K) for f in range(F)]
    return SynthDataset(EncodedDataset(X, y, ranges), factors, logits, config)


def labeled_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary labels (component streams)."""
    h = hashlib.sha256("/".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1
