"""Synthetic click-through datasets with Zipf-distributed categorical ids.

Labels come from a planted rule: every table carries a hidden score per id,
and a sample's latent score is the sum of its ids' hidden scores plus a
linear term in the dense features. The label is ``latent + noise > 0`` with
logistic noise.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .errors import MalformedInputError, ParameterError, SchemaError
from .tensor import child_seed, make_rng

DSET_MAGIC = b"DSET"
DSET_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    table_cardinalities: tuple
    dense_width: int = 4
    num_samples: int = 10_000
    zipf_exponent: float = 1.1
    seed: int = 0
    validation_fraction: float = 0.1
    noise_scale: float = 0.1
    dense_weight: float = 1.0
    permute_ids: bool = True

    def __post_init__(self):
        object.__setattr__(self, "table_cardinalities", tuple(int(c) for c in self.table_cardinalities))
        if not self.table_cardinalities or min(self.table_cardinalities) < 2:
            raise ParameterError("every table cardinality must be >= 2")
        if self.num_samples < 1:
            raise ParameterError("num_samples must be >= 1")
        if self.dense_width < 0:
            raise ParameterError("dense_width must be >= 0")
        if self.zipf_exponent < 0:
            raise ParameterError("zipf_exponent must be >= 0")
        if not 0 < self.validation_fraction < 1:
            raise ParameterError("validation_fraction must be in (0, 1)")
        if self.noise_scale < 0:
            raise ParameterError("noise_scale must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["table_cardinalities"] = list(self.table_cardinalities)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        try:
            return cls(**data)
        except TypeError as exc:
            raise SchemaError(f"bad dataset spec: {exc}") from None

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Dataset:
    categorical: np.ndarray          # (N, T) int64
    dense: np.ndarray                # (N, D) float32
    labels: np.ndarray               # (N,) float32 in {0, 1}
    cardinalities: list
    num_train: int
    latent: np.ndarray | None = None  # noise-free planted score, when known
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = [
            np.bincount(self.categorical[: self.num_train, t], minlength=c)
            for t, c in enumerate(self.cardinalities)
        ]

    @property
    def num_samples(self) -> int:
        return len(self.labels)

    @property
    def num_tables(self) -> int:
        return self.categorical.shape[1]

    @property
    def dense_width(self) -> int:
        return self.dense.shape[1]

    @property
    def train(self) -> slice:
        return slice(0, self.num_train)

    @property
    def validation(self) -> slice:
        return slice(self.num_train, self.num_samples)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.cardinalities == other.cardinalities
            and self.num_train == other.num_train
            and np.array_equal(self.categorical, other.categorical)
            and np.array_equal(self.dense, other.dense)
            and np.array_equal(self.labels, other.labels)
        )


def zipf_weights(n: int, s: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -s
    return w / w.sum()


def sample_zipf(rng: np.random.Generator, n: int, s: float, size) -> np.ndarray:
    """Inverse-CDF Zipf(s) draws over ranks ``0..n-1`` (rank 0 most frequent)."""
    cdf = np.cumsum(zipf_weights(n, s))
    cdf[-1] = 1.0
    u = rng.random(size)
    return np.minimum(np.searchsorted(cdf, u, side="right"), n - 1).astype(np.int64)


def hidden_scores(spec: DatasetSpec) -> list:
    return [make_rng(child_seed(spec.seed, 1, t)).standard_normal(c)
            for t, c in enumerate(spec.table_cardinalities)]


def generate(spec: DatasetSpec) -> Dataset:
    N = spec.num_samples
    T = len(spec.table_cardinalities)
    cats = np.empty((N, T), dtype=np.int64)
    latent = np.zeros(N)
    scores = hidden_scores(spec)
    for t, card in enumerate(spec.table_cardinalities):
        rng = make_rng(child_seed(spec.seed, 2, t))
        ranks = sample_zipf(rng, card, spec.zipf_exponent, N)
        ids = rng.permutation(card)[ranks] if spec.permute_ids else ranks
        cats[:, t] = ids
        latent += scores[t][ids]
    rng = make_rng(child_seed(spec.seed, 3))
    dense = rng.standard_normal((N, spec.dense_width))
    if spec.dense_width:
        w = rng.standard_normal(spec.dense_width) * spec.dense_weight / np.sqrt(spec.dense_width)
        latent += dense @ w
    latent /= np.sqrt(T + (spec.dense_weight**2 if spec.dense_width else 0.0))
    noise = rng.logistic(0.0, 1.0, N) * spec.noise_scale
    labels = (latent + noise > 0).astype(np.float32)
    num_val = max(1, int(round(N * spec.validation_fraction))) if N > 1 else 0
    return Dataset(cats, dense.astype(np.float32), labels, list(spec.table_cardinalities),
                   N - num_val, latent, {"spec": spec.to_dict()})


def apply_frequency_threshold(ds: Dataset, threshold: int) -> Dataset:
    """Remap ids seen fewer than ``threshold`` times in training to a shared rare id.

    Surviving ids are renumbered compactly in ascending order; the rare id, if
    any id was dropped, is appended after them.
    """
    if threshold < 0:
        raise ParameterError(f"threshold must be >= 0, got {threshold}")
    if threshold == 0:
        return ds
    cats = np.empty_like(ds.categorical)
    cards = []
    remaps = []
    for t, counts in enumerate(ds.counts):
        keep = counts >= threshold
        survivors = int(keep.sum())
        remap = np.full(len(counts), survivors, dtype=np.int64)
        remap[keep] = np.arange(survivors)
        cards.append(survivors + int(not keep.all()))
        cats[:, t] = remap[ds.categorical[:, t]]
        remaps.append(remap)
    meta = dict(ds.meta, threshold=threshold)
    out = Dataset(cats, ds.dense, ds.labels, cards, ds.num_train, ds.latent, meta)
    out.remaps = remaps
    return out


def load_schema(schema) -> dict:
    if isinstance(schema, (str, Path)):
        schema = json.loads(Path(schema).read_text())
    for key in ("label", "dense", "categorical"):
        if key not in schema:
            raise SchemaError(f"schema is missing the {key!r} entry")
    return schema


def load_csv(path, schema, validation_fraction: float = 0.1) -> Dataset:
    """Read a headered CSV; categorical strings get ids in order of first appearance."""
    schema = load_schema(schema)
    label_col, dense_cols, cat_cols = schema["label"], list(schema["dense"]), list(schema["categorical"])
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedInputError(f"{path}: empty file") from None
        pos = {name: i for i, name in enumerate(header)}
        for name in [label_col, *dense_cols, *cat_cols]:
            if name not in pos:
                raise SchemaError(f"column {name!r} named in schema is not in the CSV header")
        vocab = [dict() for _ in cat_cols]
        labels, dense, cats = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedInputError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                y = float(row[pos[label_col]])
                x = [float(row[pos[c]]) for c in dense_cols]
            except ValueError as exc:
                raise MalformedInputError(f"{path}:{line_no}: {exc}") from None
            if y not in (0.0, 1.0):
                raise MalformedInputError(f"{path}:{line_no}: label must be 0 or 1, got {y}")
            ids = []
            for t, c in enumerate(cat_cols):
                ids.append(vocab[t].setdefault(row[pos[c]], len(vocab[t])))
            labels.append(y)
            dense.append(x)
            cats.append(ids)
    N = len(labels)
    if N == 0:
        raise MalformedInputError(f"{path}: no data rows")
    num_val = int(round(N * validation_fraction)) if N > 1 else 0
    ds = Dataset(
        np.array(cats, dtype=np.int64).reshape(N, len(cat_cols)),
        np.array(dense, dtype=np.float32).reshape(N, len(dense_cols)),
        np.array(labels, dtype=np.float32),
        [max(1, len(v)) for v in vocab],
        N - num_val,
        None,
        {"csv": str(path), "schema": schema},
    )
    ds.vocab = vocab
    return ds


def save_dataset(ds: Dataset, path) -> None:
    arrays = {"categorical": ds.categorical, "dense": ds.dense, "labels": ds.labels}
    if ds.latent is not None:
        arrays["latent"] = ds.latent
    meta = {"cardinalities": ds.cardinalities, "num_train": ds.num_train, "meta": ds.meta}
    container.write(path, DSET_MAGIC, DSET_VERSION, meta, arrays)


def load_dataset(path) -> Dataset:
    meta, arrays = container.read(path, DSET_MAGIC, DSET_VERSION)
    return Dataset(arrays["categorical"], arrays["dense"], arrays["labels"], meta["cardinalities"],
                   meta["num_train"], arrays.get("latent"), meta["meta"])
