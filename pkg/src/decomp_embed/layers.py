"""Trainable embedding layers: a dense baseline and five decomposed variants.

Every layer maps a row id ``i`` in ``[0, n)`` to a ``d``-dimensional vector.
The decomposed layers never store the ``n x d`` table; rows are rebuilt from
small factors at lookup time.

Parameters that are indexed by row id keep that id on axis 0 so their
gradients can be returned as :class:`~decomp_embed.optim.SparseGrad`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError, RowIndexError, ShapeError
from .optim import SparseGrad
from .tensor import DEFAULT_DTYPE

KINDS = ("native", "lowrank", "quotient_remainder", "memcom", "tensor_train", "frobenius")


@dataclass(frozen=True)
class EmbeddingSpec:
    n: int
    d: int
    init_std: float = 0.01

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ParameterError(f"n and d must be >= 1, got n={self.n}, d={self.d}")
        if self.init_std < 0:
            raise ParameterError(f"init_std must be >= 0, got {self.init_std}")


@dataclass(frozen=True)
class NativeConfig:
    pass


@dataclass(frozen=True)
class LowRankConfig:
    r: int

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError(f"rank must be >= 1, got {self.r}")


@dataclass(frozen=True)
class QRConfig:
    pass


@dataclass(frozen=True)
class MemComConfig:
    buckets: int

    def __post_init__(self):
        if self.buckets < 1:
            raise ConfigError(f"bucket count must be >= 1, got {self.buckets}")


@dataclass(frozen=True)
class TTConfig:
    row_factors: tuple
    col_factors: tuple
    ranks: tuple

    def __post_init__(self):
        object.__setattr__(self, "row_factors", tuple(int(x) for x in self.row_factors))
        object.__setattr__(self, "col_factors", tuple(int(x) for x in self.col_factors))
        object.__setattr__(self, "ranks", tuple(int(x) for x in self.ranks))
        k = len(self.row_factors)
        if k < 1 or len(self.col_factors) != k or len(self.ranks) != k + 1:
            raise ConfigError(
                "TT config needs K row factors, K col factors and K+1 ranks, got "
                f"{len(self.row_factors)}, {len(self.col_factors)}, {len(self.ranks)}"
            )
        if self.ranks[0] != 1 or self.ranks[-1] != 1:
            raise ConfigError(f"boundary TT ranks must be 1, got {self.ranks}")
        if min(self.row_factors + self.col_factors + self.ranks) < 1:
            raise ConfigError("all TT factors and ranks must be >= 1")


@dataclass(frozen=True)
class FrobeniusConfig:
    r: int
    p: int

    def __post_init__(self):
        if self.r < 1 or self.p < 1:
            raise ConfigError(f"r and p must be >= 1, got r={self.r}, p={self.p}")


def split_size(n: int) -> tuple[int, int]:
    """``(quotient rows, remainder rows)`` for the ``m = ceil(sqrt(n))`` split."""
    m = math.isqrt(n - 1) + 1 if n > 1 else 1
    return -(-n // m), m


def mixed_radix(i: int, factors) -> tuple:
    """Digits of ``i`` over ``factors``, most significant first."""
    digits = []
    for f in reversed(factors):
        digits.append(i % f)
        i //= f
    return tuple(reversed(digits))


def _normal(rng, shape, std, dtype):
    if std == 0:
        return np.zeros(shape, dtype=dtype)
    return (rng.standard_normal(shape) * std).astype(dtype)


class EmbeddingLayer:
    """Common interface; subclasses implement the per-kind lookup and gradient."""

    kind = ""

    def __init__(self, spec: EmbeddingSpec, config, params: dict):
        self.spec = spec
        self.config = config
        self.params = params
        self._check_shapes()

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def param_shapes(self) -> dict:
        raise NotImplementedError

    def _check_shapes(self):
        want = self.param_shapes()
        got = {k: v.shape for k, v in self.params.items()}
        if set(want) != set(got) or any(tuple(want[k]) != got[k] for k in want):
            raise ShapeError(f"{self.kind} parameters {got} do not match expected {want}")

    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def param_bytes(self) -> int:
        return 4 * self.param_count()

    def check_indices(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            bad = idx[(idx < 0) | (idx >= self.n)][0]
            raise RowIndexError(f"row id {bad} out of range [0, {self.n})")
        return idx

    def _check_row(self, i: int) -> int:
        i = int(i)
        if not 0 <= i < self.n:
            raise RowIndexError(f"row id {i} out of range [0, {self.n})")
        return i

    def lookup(self, indices) -> np.ndarray:
        return self._lookup(self.check_indices(indices))

    def grad(self, indices, upstream) -> dict:
        """Gradient of ``sum_b <upstream[b], row(indices[b])>`` per parameter."""
        idx = self.check_indices(indices)
        upstream = np.asarray(upstream)
        if upstream.shape != (len(idx), self.d):
            raise ShapeError(f"upstream shape {upstream.shape} != {(len(idx), self.d)}")
        return self._grad(idx, upstream.astype(self.dtype, copy=False))

    def apply_grads(self, grads: dict, optimizer, prefix: str = "") -> None:
        if set(grads) != set(self.params):
            raise ShapeError(f"gradient keys {sorted(grads)} != parameter keys {sorted(self.params)}")
        for name, g in grads.items():
            optimizer.step(prefix + name, self.params[name], g)

    def materialize(self) -> np.ndarray:
        return self.lookup(np.arange(self.n))

    def reconstruct_row(self, i: int) -> np.ndarray:
        raise NotImplementedError

    def _lookup(self, idx):
        raise NotImplementedError

    def _grad(self, idx, up):
        raise NotImplementedError

    def _sparse(self, name, rows, contributions):
        return SparseGrad.accumulate(rows, contributions, self.params[name].shape)


class NativeEmbedding(EmbeddingLayer):
    kind = "native"

    def param_shapes(self):
        return {"E": (self.n, self.d)}

    @classmethod
    def init_params(cls, spec, config, rng, dtype):
        return {"E": _normal(rng, (spec.n, spec.d), spec.init_std, dtype)}

    def _lookup(self, idx):
        return self.params["E"][idx]

    def _grad(self, idx, up):
        return {"E": self._sparse("E", idx, up)}

    def reconstruct_row(self, i):
        i = self._check_row(i)
        return np.array([float(x) for x in self.params["E"][i]])


class LowRankEmbedding(EmbeddingLayer):
    kind = "lowrank"

    def param_shapes(self):
        r = self.config.r
        return {"A": (self.n, r), "B": (r, self.d)}

    @classmethod
    def init_params(cls, spec, config, rng, dtype):
        std = (spec.init_std ** 2 / config.r) ** 0.25
        return {
            "A": _normal(rng, (spec.n, config.r), std, dtype),
            "B": _normal(rng, (config.r, spec.d), std, dtype),
        }

    def _lookup(self, idx):
        return self.params["A"][idx] @ self.params["B"]

    def _grad(self, idx, up):
        a = self.params["A"][idx]
        return {
            "A": self._sparse("A", idx, up @ self.params["B"].T),
            "B": a.T @ up,
        }

    def reconstruct_row(self, i):
        i = self._check_row(i)
        A, B = self.params["A"], self.params["B"]
        out = []
        for c in range(self.d):
            out.append(sum(float(A[i, k]) * float(B[k, c]) for k in range(self.config.r)))
        return np.array(out)


class QREmbedding(EmbeddingLayer):
    """``row_i = Q[i // m] * R[i % m]`` with ``m = ceil(sqrt(n))``."""

    kind = "quotient_remainder"

    def param_shapes(self):
        nq, m = split_size(self.n)
        return {"Q": (nq, self.d), "R": (m, self.d)}

    @classmethod
    def init_params(cls, spec, config, rng, dtype):
        nq, m = split_size(spec.n)
        std = spec.init_std ** 0.5
        return {
            "Q": _normal(rng, (nq, spec.d), std, dtype),
            "R": _normal(rng, (m, spec.d), std, dtype),
        }

    def _split(self, idx):
        m = self.params["R"].shape[0]
        return idx // m, idx % m

    def _lookup(self, idx):
        q, t = self._split(idx)
        return self.params["Q"][q] * self.params["R"][t]

    def _grad(self, idx, up):
        q, t = self._split(idx)
        Qq, Rt = self.params["Q"][q], self.params["R"][t]
        return {"Q": self._sparse("Q", q, up * Rt), "R": self._sparse("R", t, up * Qq)}

    def reconstruct_row(self, i):
        i = self._check_row(i)
        m = self.params["R"].shape[0]
        q, t = divmod(i, m)
        Q, R = self.params["Q"], self.params["R"]
        return np.array([float(Q[q, c]) * float(R[t, c]) for c in range(self.d)])


class MemComEmbedding(EmbeddingLayer):
    """``row_i = s[i] * M[i % k]``; per-row scalars start at 1."""

    kind = "memcom"

    def param_shapes(self):
        return {"s": (self.n, 1), "M": (self.config.buckets, self.d)}

    @classmethod
    def init_params(cls, spec, config, rng, dtype):
        return {
            "s": np.ones((spec.n, 1), dtype=dtype),
            "M": _normal(rng, (config.buckets, spec.d), spec.init_std, dtype),
        }

    def _lookup(self, idx):
        k = self.config.buckets
        return self.params["s"][idx] * self.params["M"][idx % k]

    def _grad(self, idx, up):
        k = self.config.buckets
        b = idx % k
        Mb = self.params["M"][b]
        ds = np.sum(up * Mb, axis=1, keepdims=True)
        return {"s": self._sparse("s", idx, ds), "M": self._sparse("M", b, up * self.params["s"][idx])}

    def reconstruct_row(self, i):
        i = self._check_row(i)
        s = float(self.params["s"][i, 0])
        row = self.params["M"][i % self.config.buckets]
        return np.array([s * float(x) for x in row])


class TTEmbedding(EmbeddingLayer):
    """Tensor-train table. Core ``k`` has shape ``(n_k, r_{k-1}, d_k, r_k)``.

    Row ids and column ids are both decomposed most-significant-digit first.
    """

    kind = "tensor_train"

    def param_shapes(self):
        c = self.config
        return {
            f"G{k}": (c.row_factors[k], c.ranks[k], c.col_factors[k], c.ranks[k + 1])
            for k in range(len(c.row_factors))
        }

    @staticmethod
    def validate(spec, config):
        if math.prod(config.col_factors) != spec.d:
            raise ConfigError(f"product of col_factors {config.col_factors} != d={spec.d}")
        if math.prod(config.row_factors) < spec.n:
            raise ConfigError(f"product of row_factors {config.row_factors} < n={spec.n}")

    @classmethod
    def init_params(cls, spec, config, rng, dtype):
        K = len(config.row_factors)
        inner = math.prod(config.ranks[1:-1])
        std = (spec.init_std ** 2 / inner) ** (1.0 / (2 * K)) if spec.init_std > 0 else 0.0
        shapes = [
            (config.row_factors[k], config.ranks[k], config.col_factors[k], config.ranks[k + 1])
            for k in range(K)
        ]
        return {f"G{k}": _normal(rng, s, std, dtype) for k, s in enumerate(shapes)}

    def _digits(self, idx):
        digits = []
        for f in reversed(self.config.row_factors):
            digits.append(idx % f)
            idx = idx // f
        return digits[::-1]

    def _forward(self, idx):
        digits = self._digits(idx)
        K = len(digits)
        slices = [self.params[f"G{k}"][digits[k]] for k in range(K)]
        B = len(idx)
        left = slices[0].reshape(B, self.config.col_factors[0], self.config.ranks[1])
        lefts = [left]
        for k in range(1, K):
            # (B, P, r) x (B, r, d_k, r') -> (B, P * d_k, r')
            nxt = np.einsum("bpr,brdq->bpdq", left, slices[k], optimize=True)
            left = nxt.reshape(B, -1, self.config.ranks[k + 1])
            lefts.append(left)
        return digits, slices, lefts

    def _lookup(self, idx):
        _, _, lefts = self._forward(idx)
        return lefts[-1].reshape(len(idx), self.d)

    def _grad(self, idx, up):
        digits, slices, lefts = self._forward(idx)
        K = len(digits)
        B = len(idx)
        grads = {}
        d_left = up.reshape(B, self.d, 1)
        for k in range(K - 1, 0, -1):
            dk, rk = self.config.col_factors[k], self.config.ranks[k + 1]
            g4 = d_left.reshape(B, -1, dk, rk)
            prev = lefts[k - 1]
            grads[f"G{k}"] = self._sparse(
                f"G{k}", digits[k], np.einsum("bpr,bpdq->brdq", prev, g4, optimize=True)
            )
            d_left = np.einsum("bpdq,brdq->bpr", g4, slices[k], optimize=True)
        grads["G0"] = self._sparse("G0", digits[0], d_left.reshape(slices[0].shape))
        return {f"G{k}": grads[f"G{k}"] for k in range(K)}

    def reconstruct_row(self, i):
        i = self._check_row(i)
        c = self.config
        K = len(c.row_factors)
        digits = mixed_radix(i, c.row_factors)
        cores = [self.params[f"G{k}"] for k in range(K)]
        out = []
        for cols in itertools.product(*(range(x) for x in c.col_factors)):
            total = 0.0
            for inner in itertools.product(*(range(r) for r in c.ranks[1:-1])):
                ranks = (0,) + inner + (0,)
                prod = 1.0
                for k in range(K):
                    prod *= float(cores[k][digits[k], ranks[k], cols[k], ranks[k + 1]])
                total += prod
            out.append(total)
        return np.array(out)


class FrobeniusEmbedding(EmbeddingLayer):
    """Sum of ``p`` rank-``r`` quotient/remainder terms with a projection each.

    With ``m = ceil(sqrt(n))``, ``q = i // m`` and ``t = i % m``::

        row_i = sum_j (A[q, j] * B[t, j]) @ W[j]

    ``A`` is ``(ceil(n/m), p, r)``, ``B`` is ``(m, p, r)`` and ``W`` is ``(p, r, d)``.
    """

    kind = "frobenius"

    def param_shapes(self):
        nq, m = split_size(self.n)
        r, p = self.config.r, self.config.p
        return {"A": (nq, p, r), "B": (m, p, r), "W": (p, r, self.d)}

    @classmethod
    def init_params(cls, spec, config, rng, dtype):
        nq, m = split_size(spec.n)
        r, p = config.r, config.p
        std = (spec.init_std ** 2 / (p * r)) ** (1.0 / 6.0)
        return {
            "A": _normal(rng, (nq, p, r), std, dtype),
            "B": _normal(rng, (m, p, r), std, dtype),
            "W": _normal(rng, (p, r, spec.d), std, dtype),
        }

    def _codes(self, idx):
        m = self.params["B"].shape[0]
        q, t = idx // m, idx % m
        a = self.params["A"][q]
        b = self.params["B"][t]
        return q, t, a, b

    def _lookup(self, idx):
        _, _, a, b = self._codes(idx)
        pr = self.config.p * self.config.r
        return (a * b).reshape(len(idx), pr) @ self.params["W"].reshape(pr, self.d)

    def _grad(self, idx, up):
        q, t, a, b = self._codes(idx)
        B = len(idx)
        p, r = self.config.p, self.config.r
        h = (a * b).reshape(B, p * r)
        W = self.params["W"].reshape(p * r, self.d)
        dh = (up @ W.T).reshape(B, p, r)
        return {
            "A": self._sparse("A", q, dh * b),
            "B": self._sparse("B", t, dh * a),
            "W": (h.T @ up).reshape(p, r, self.d),
        }

    def reconstruct_row(self, i):
        i = self._check_row(i)
        A, B, W = self.params["A"], self.params["B"], self.params["W"]
        m = B.shape[0]
        q, t = divmod(i, m)
        out = [0.0] * self.d
        for j in range(self.config.p):
            for k in range(self.config.r):
                code = float(A[q, j, k]) * float(B[t, j, k])
                for c in range(self.d):
                    out[c] += code * float(W[j, k, c])
        return np.array(out)


LAYER_CLASSES = {
    cls.kind: cls
    for cls in (NativeEmbedding, LowRankEmbedding, QREmbedding, MemComEmbedding, TTEmbedding,
                FrobeniusEmbedding)
}

CONFIG_CLASSES = {
    "native": NativeConfig,
    "lowrank": LowRankConfig,
    "quotient_remainder": QRConfig,
    "memcom": MemComConfig,
    "tensor_train": TTConfig,
    "frobenius": FrobeniusConfig,
}


def build(kind: str, spec: EmbeddingSpec, config=None, rng=None, dtype=DEFAULT_DTYPE) -> EmbeddingLayer:
    """Construct and initialize a layer of ``kind``.

    Factors are drawn i.i.d. Gaussian with a per-kind std chosen so that the
    implied row entries have mean 0 and variance ``spec.init_std ** 2``.
    """
    if kind not in LAYER_CLASSES:
        raise ConfigError(f"unknown layer kind {kind!r}; expected one of {KINDS}")
    if config is None:
        config = CONFIG_CLASSES[kind]()
    if not isinstance(config, CONFIG_CLASSES[kind]):
        raise ConfigError(f"{kind} layer needs {CONFIG_CLASSES[kind].__name__}, got {type(config).__name__}")
    if kind == "tensor_train":
        TTEmbedding.validate(spec, config)
    if rng is None:
        raise ParameterError("build needs an rng")
    cls = LAYER_CLASSES[kind]
    return cls(spec, config, cls.init_params(spec, config, rng, dtype))


def from_params(kind: str, spec: EmbeddingSpec, config, params: dict) -> EmbeddingLayer:
    return LAYER_CLASSES[kind](spec, config, params)


def expected_param_count(kind: str, spec: EmbeddingSpec, config=None) -> int:
    """Closed-form parameter count, without building the layer."""
    n, d = spec.n, spec.d
    nq, m = split_size(n)
    if kind == "native":
        return n * d
    if kind == "lowrank":
        return n * config.r + config.r * d
    if kind == "quotient_remainder":
        return (nq + m) * d
    if kind == "memcom":
        return n + config.buckets * d
    if kind == "tensor_train":
        c = config
        return sum(c.row_factors[k] * c.ranks[k] * c.col_factors[k] * c.ranks[k + 1]
                   for k in range(len(c.row_factors)))
    if kind == "frobenius":
        return config.p * (nq * config.r + m * config.r + config.r * d)
    raise ConfigError(f"unknown layer kind {kind!r}")


def config_to_dict(config) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in config.__dict__.items()}


def config_from_dict(kind: str, data: dict):
    if kind not in CONFIG_CLASSES:
        raise ConfigError(f"unknown layer kind {kind!r}; expected one of {KINDS}")
    try:
        return CONFIG_CLASSES[kind](**data)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} config {data}: {exc}") from None


def default_tt_config(n: int, d: int, rank: int = 8, cores: int = 3) -> TTConfig:
    """Near-balanced factorization of ``n`` (padded) and ``d`` over ``cores`` cores."""
    base = max(2, math.ceil(n ** (1.0 / cores)))
    row = [base] * cores
    col = _factor_dim(d, cores)
    ranks = [1] + [rank] * (cores - 1) + [1]
    return TTConfig(tuple(row), tuple(col), tuple(ranks))


def _factor_dim(d: int, cores: int) -> list:
    primes = []
    x = d
    f = 2
    while f * f <= x:
        while x % f == 0:
            primes.append(f)
            x //= f
        f += 1
    if x > 1:
        primes.append(x)
    out = [1] * cores
    for pr in sorted(primes, reverse=True):
        out[out.index(min(out))] *= pr
    return sorted(out, reverse=True)


@dataclass
class LayerSummary:
    kind: str
    n: int
    d: int
    params: int
    bytes: int
    config: dict = field(default_factory=dict)


def summarize(layer: EmbeddingLayer) -> LayerSummary:
    return LayerSummary(layer.kind, layer.n, layer.d, layer.param_count(), layer.param_bytes(),
                        config_to_dict(layer.config))
