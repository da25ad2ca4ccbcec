"""A small DLRM-style click model: embedding lookups and dense features
concatenated into a two-hidden-layer ReLU MLP with a single logit.

Forward and backward are written out by hand; embedding gradients are
delegated to each layer's :meth:`grad`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .heuristic import recommend_pairs, select_default
from .layers import (
    EmbeddingSpec,
    FrobeniusConfig,
    QRConfig,
    NativeConfig,
    build,
    config_from_dict,
    default_tt_config,
)
from .tensor import DEFAULT_DTYPE, child_seed, make_rng

MLP_KEYS = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 16
    hidden: tuple = (64, 32)
    init_std: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ConfigError(f"need two positive hidden widths, got {self.hidden}")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")

    def to_dict(self) -> dict:
        return {"embedding_dim": self.embedding_dim, "hidden": list(self.hidden), "init_std": self.init_std}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from None


def resolve_variant(cardinalities, embedding_dim: int, variant: dict) -> list:
    """Per-table ``(kind, config)`` for a variant description.

    ``variant`` looks like ``{"kind": "frobenius", "r": 8, "p": 4, "largest": 4}``:
    the ``largest`` biggest tables (all of them if omitted) use ``kind``, the
    rest stay native. A Frobenius variant without ``r``/``p`` takes the
    heuristic's default pair for each table.
    """
    kind = variant.get("kind", "native")
    opts = {k: v for k, v in variant.items() if k not in ("kind", "largest", "name", "epochs")}
    largest = variant.get("largest", len(cardinalities))
    order = sorted(range(len(cardinalities)), key=lambda t: (-cardinalities[t], t))
    chosen = set(order[:largest])
    out = []
    for t, n in enumerate(cardinalities):
        if t not in chosen or kind == "native":
            out.append(("native", NativeConfig()))
            continue
        if kind == "frobenius" and ("r" not in opts or "p" not in opts):
            pick = select_default(recommend_pairs(n, embedding_dim))
            out.append((kind, FrobeniusConfig(pick.r, pick.p)))
        elif kind == "tensor_train" and "row_factors" not in opts:
            out.append((kind, default_tt_config(n, embedding_dim, opts.get("rank", 8))))
        elif kind == "quotient_remainder":
            out.append((kind, QRConfig()))
        else:
            out.append((kind, config_from_dict(kind, opts)))
    return out


class MiniCtrModel:
    def __init__(self, embeddings: list, dense_width: int, mlp: dict, model_config: ModelConfig):
        self.embeddings = embeddings
        self.dense_width = dense_width
        self.mlp = mlp
        self.model_config = model_config
        want_in = dense_width + sum(e.d for e in embeddings)
        if mlp["W1"].shape[0] != want_in:
            raise ShapeError(f"MLP input width {mlp['W1'].shape[0]} != {want_in}")

    @classmethod
    def create(cls, cardinalities, dense_width: int, model_config: ModelConfig, assignment: list,
               seed: int, dtype=DEFAULT_DTYPE) -> "MiniCtrModel":
        if len(assignment) != len(cardinalities):
            raise ConfigError(f"{len(assignment)} layer assignments for {len(cardinalities)} tables")
        d = model_config.embedding_dim
        embeddings = []
        for t, (n, (kind, cfg)) in enumerate(zip(cardinalities, assignment)):
            spec = EmbeddingSpec(int(n), d, model_config.init_std)
            embeddings.append(build(kind, spec, cfg, make_rng(child_seed(seed, 10, t)), dtype))
        rng = make_rng(child_seed(seed, 11))
        h1, h2 = model_config.hidden
        fan_in = dense_width + d * len(cardinalities)
        mlp = {
            "W1": (rng.standard_normal((fan_in, h1)) * np.sqrt(2.0 / fan_in)).astype(dtype),
            "b1": np.zeros(h1, dtype=dtype),
            "W2": (rng.standard_normal((h1, h2)) * np.sqrt(2.0 / h1)).astype(dtype),
            "b2": np.zeros(h2, dtype=dtype),
            "W3": (rng.standard_normal((h2, 1)) * np.sqrt(1.0 / h2)).astype(dtype),
            "b3": np.zeros(1, dtype=dtype),
        }
        return cls(embeddings, dense_width, mlp, model_config)

    @property
    def embedding_bytes(self) -> int:
        return sum(e.param_bytes() for e in self.embeddings)

    def forward(self, categorical, dense, cache: bool = False):
        categorical = np.asarray(categorical)
        dense = np.asarray(dense, dtype=self.mlp["W1"].dtype)
        if categorical.ndim != 2 or categorical.shape[1] != len(self.embeddings):
            raise ShapeError(f"categorical batch shape {categorical.shape} does not match "
                             f"{len(self.embeddings)} tables")
        parts = [dense] + [e.lookup(categorical[:, t]) for t, e in enumerate(self.embeddings)]
        x = np.concatenate(parts, axis=1)
        m = self.mlp
        a1 = x @ m["W1"] + m["b1"]
        z1 = np.maximum(a1, 0)
        a2 = z1 @ m["W2"] + m["b2"]
        z2 = np.maximum(a2, 0)
        logits = (z2 @ m["W3"] + m["b3"])[:, 0]
        if cache:
            return logits, (categorical, x, a1, z1, a2, z2)
        return logits

    def backward(self, cache, upstream) -> dict:
        """Gradients of ``sum_b upstream[b] * logit[b]`` for every parameter."""
        categorical, x, a1, z1, a2, z2 = cache
        m = self.mlp
        g = np.asarray(upstream, dtype=x.dtype).reshape(-1, 1)
        grads = {"W3": z2.T @ g, "b3": g.sum(0)}
        dz2 = g @ m["W3"].T
        da2 = dz2 * (a2 > 0)
        grads["W2"] = z1.T @ da2
        grads["b2"] = da2.sum(0)
        dz1 = da2 @ m["W2"].T
        da1 = dz1 * (a1 > 0)
        grads["W1"] = x.T @ da1
        grads["b1"] = da1.sum(0)
        dx = da1 @ m["W1"].T
        emb = []
        col = self.dense_width
        for t, e in enumerate(self.embeddings):
            emb.append(e.grad(categorical[:, t], dx[:, col:col + e.d]))
            col += e.d
        return {"mlp": grads, "emb": emb}

    def apply(self, grads: dict, optimizer) -> None:
        for k in MLP_KEYS:
            optimizer.step(f"mlp.{k}", self.mlp[k], grads["mlp"][k])
        for t, (e, g) in enumerate(zip(self.embeddings, grads["emb"])):
            e.apply_grads(g, optimizer, prefix=f"emb{t}.")

    def predict(self, categorical, dense, batch: int = 65536) -> np.ndarray:
        out = [self.forward(categorical[i:i + batch], dense[i:i + batch])
               for i in range(0, len(categorical), batch)]
        return np.concatenate(out) if out else np.zeros(0)

    def all_params(self) -> dict:
        out = {f"mlp.{k}": v for k, v in self.mlp.items()}
        for t, e in enumerate(self.embeddings):
            out.update({f"emb{t}.{k}": v for k, v in e.params.items()})
        return out
