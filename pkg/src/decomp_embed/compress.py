"""Post-training compressors for a trained embedding table.

* int4 row-wise quantization, either on an affine min/max grid or on a
  per-row 16-entry k-means codebook;
* frequency-weighted k-means over whole rows, seeded at the most frequent rows;
* segmented Johnson-Lindenstrauss projection, storing only the seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError
from .tensor import frobenius_norm, make_rng

LEVELS = 16
SCALAR_KMEANS_ITERS = 25
ROW_KMEANS_ITERS = 50
ROW_KMEANS_TOL = 1e-6


def normalized_l2_loss(original, approx) -> float:
    original = np.asarray(original, dtype=np.float64)
    approx = np.asarray(approx, dtype=np.float64)
    if original.shape != approx.shape:
        raise ParameterError(f"shape mismatch {original.shape} vs {approx.shape}")
    denom = frobenius_norm(original)
    num = frobenius_norm(original - approx)
    if denom == 0:
        return 0.0 if num == 0 else math.inf
    return num / denom


# ---------------------------------------------------------------- int4 ----


def pack_int4(codes) -> np.ndarray:
    """Pack 4-bit codes two per byte, even position in the low nibble."""
    flat = np.asarray(codes, dtype=np.uint8).reshape(-1)
    if flat.size and flat.max() > 15:
        raise ParameterError("int4 codes must lie in [0, 15]")
    if flat.size % 2:
        flat = np.append(flat, np.uint8(0))
    return (flat[0::2] | (flat[1::2] << 4)).astype(np.uint8)


def unpack_int4(packed, count: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    out = np.empty(packed.size * 2, dtype=np.uint8)
    out[0::2] = packed & 0x0F
    out[1::2] = packed >> 4
    return out[:count]


@dataclass
class QuantizedTable:
    strategy: str
    shape: tuple
    packed: np.ndarray
    scale: np.ndarray | None = None
    offset: np.ndarray | None = None
    codebook: np.ndarray | None = None

    @property
    def codes(self) -> np.ndarray:
        n, d = self.shape
        return unpack_int4(self.packed, n * d).reshape(n, d)

    @property
    def nbytes(self) -> int:
        n, _ = self.shape
        if self.strategy == "minmax":
            return self.packed.size + 8 * n
        return self.packed.size + 4 * LEVELS * n


def _minmax(table):
    lo = table.min(axis=1)
    hi = table.max(axis=1)
    scale = (hi - lo) / (LEVELS - 1)
    safe = np.where(scale > 0, scale, 1.0)
    codes = np.rint((table - lo[:, None]) / safe[:, None])
    codes = np.where(scale[:, None] > 0, codes, 0)
    return np.clip(codes, 0, LEVELS - 1).astype(np.uint8), scale, lo


def _nearest(values, centers):
    # argmin picks the lowest index on ties
    return np.argmin(np.abs(values[:, :, None] - centers[:, None, :]), axis=2)


def _scalar_kmeans(rows: np.ndarray, iters: int = SCALAR_KMEANS_ITERS):
    """Per-row 1-D Lloyd with ``LEVELS`` centers.

    Centers start at the 16 evenly spaced quantiles of the row, min and max
    included.
    """
    qs = np.linspace(0.0, 1.0, LEVELS)
    centers = np.quantile(rows, qs, axis=1).T.copy()
    onehot_range = np.arange(LEVELS)
    for _ in range(iters):
        assign = _nearest(rows, centers)
        mask = assign[:, :, None] == onehot_range[None, None, :]
        counts = mask.sum(axis=1)
        sums = np.einsum("nd,ndk->nk", rows, mask.astype(rows.dtype))
        new = np.where(counts > 0, sums / np.maximum(counts, 1), centers)
        empty_rows = np.nonzero((counts == 0).any(axis=1))[0]
        for i in empty_rows:
            new[i] = _reseed_scalar(rows[i], new[i], assign[i], counts[i])
        if np.array_equal(new, centers):
            break
        centers = new
    return _nearest(rows, centers).astype(np.uint8), centers


def _reseed_scalar(row, centers, assign, counts):
    centers = centers.copy()
    dist = np.abs(row - centers[assign])
    taken = set()
    for k in np.nonzero(counts == 0)[0]:
        order = np.argsort(-dist, kind="stable")
        for j in order:
            if j not in taken:
                taken.add(int(j))
                centers[k] = row[j]
                dist[j] = 0.0
                break
    return centers


def quantize_int4(table, strategy: str = "minmax", chunk_rows: int = 4096) -> QuantizedTable:
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or min(table.shape) < 1:
        raise ParameterError(f"expected a non-empty 2-D table, got shape {table.shape}")
    if strategy == "minmax":
        codes, scale, offset = _minmax(table)
        return QuantizedTable("minmax", table.shape, pack_int4(codes),
                              scale.astype(np.float32), offset.astype(np.float32))
    if strategy == "kmeans":
        codes = np.empty(table.shape, dtype=np.uint8)
        books = np.empty((table.shape[0], LEVELS))
        for start in range(0, table.shape[0], chunk_rows):
            sl = slice(start, start + chunk_rows)
            codes[sl], books[sl] = _scalar_kmeans(table[sl])
        return QuantizedTable("kmeans", table.shape, pack_int4(codes), codebook=books.astype(np.float32))
    raise ParameterError(f"unknown int4 strategy {strategy!r}")


def dequantize(qt: QuantizedTable) -> np.ndarray:
    codes = qt.codes
    if qt.strategy == "minmax":
        scale = qt.scale.astype(np.float64)[:, None]
        offset = qt.offset.astype(np.float64)[:, None]
        return (offset + scale * codes).astype(np.float32)
    return np.take_along_axis(qt.codebook, codes.astype(np.int64), axis=1)


# ------------------------------------------------------------ clustering ----


@dataclass
class ClusteredTable:
    centroids: np.ndarray
    assignment: np.ndarray
    objective_history: list = field(default_factory=list)
    init_centroids: np.ndarray | None = None

    @property
    def objective(self) -> float:
        return self.objective_history[-1]

    @property
    def nbytes(self) -> int:
        return 4 * self.centroids.size + 4 * self.assignment.size

    def reconstruct(self) -> np.ndarray:
        return self.centroids[self.assignment]


def _assign(x, c, chunk: int = 2048):
    """Nearest centroid per row (lowest index on ties) and its squared distance."""
    cc = (c * c).sum(1)
    assign = np.empty(len(x), dtype=np.int64)
    best = np.empty(len(x))
    for start in range(0, len(x), chunk):
        xb = x[start:start + chunk]
        d = (xb * xb).sum(1)[:, None] - 2 * xb @ c.T + cc[None, :]
        a = np.argmin(d, axis=1)
        assign[start:start + chunk] = a
        # exact distance for the winner, so k == n gives an exact zero
        diff = xb - c[a]
        best[start:start + chunk] = (diff * diff).sum(1)
    return assign, best


def _init_rows(freqs, k, init, rng):
    n = len(freqs)
    if init == "frequent":
        chosen = np.argsort(-freqs, kind="stable")[:k]
    elif init == "random":
        if rng is None:
            raise ParameterError("random init needs an rng")
        chosen = rng.choice(n, size=k, replace=False)
    else:
        raise ParameterError(f"unknown init {init!r}")
    return np.sort(chosen)


def cluster_rows(table, freqs, k: int, init: str = "frequent", rng=None,
                 max_iter: int = ROW_KMEANS_ITERS, tol: float = ROW_KMEANS_TOL) -> ClusteredTable:
    """Frequency-weighted Lloyd's k-means over table rows.

    Minimizes ``sum_i freqs[i] * ||row_i - centroid[assign_i]||^2``. Seeded
    centroids are kept in ascending row order, so ``k == n`` yields the
    identity assignment.
    """
    x = np.asarray(table, dtype=np.float64)
    w = np.asarray(freqs, dtype=np.float64)
    n = x.shape[0]
    if len(w) != n:
        raise ParameterError(f"freqs has length {len(w)}, table has {n} rows")
    if not 1 <= k <= n:
        raise ParameterError(f"need 1 <= k <= n, got k={k}, n={n}")
    if np.any(w < 0):
        raise ParameterError("frequencies must be non-negative")

    centroids = x[_init_rows(w, k, init, rng)].copy()
    init_centroids = centroids.copy()
    history = []
    for _ in range(max_iter):
        assign, best = _assign(x, centroids)
        obj = float(np.dot(w, best))
        history.append(obj)
        if len(history) > 1:
            prev = history[-2]
            if prev == 0 or abs(prev - obj) / prev < tol:
                break
        weight = np.bincount(assign, weights=w, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, w[:, None] * x)
        members = np.bincount(assign, minlength=k)
        live = weight > 0
        centroids[live] = sums[live] / weight[live, None]
        single = np.nonzero((members == 1) & live)[0]
        if len(single):
            owner = np.full(k, -1)
            owner[assign] = np.arange(n)
            centroids[single] = x[owner[single]]
        empty = np.nonzero(members == 0)[0]
        if len(empty):
            cost = w * best
            for c, j in zip(empty, np.argsort(-cost, kind="stable")):
                centroids[c] = x[j]
    else:
        # loop ran out after an update step; record the final assignment
        assign, best = _assign(x, centroids)
        history.append(float(np.dot(w, best)))
    return ClusteredTable(centroids.astype(np.float32), assign.astype(np.int64), history, init_centroids)


def weighted_objective(table, freqs, centroids, assignment) -> float:
    x = np.asarray(table, dtype=np.float64)
    diff = x - np.asarray(centroids, dtype=np.float64)[assignment]
    return float(np.dot(np.asarray(freqs, dtype=np.float64), (diff * diff).sum(1)))


# -------------------------------------------------------------- JL sketch ----


def jl_min_dim(n_points: int, eps: float) -> int:
    """Smallest target dimension guaranteed by the JL lemma for ``n_points``."""
    if not 0 < eps < 1:
        raise ParameterError(f"eps must be in (0, 1), got {eps}")
    return int(math.ceil(4 * math.log(n_points) / (eps**2 / 2 - eps**3 / 3)))


@dataclass
class ProjectedTable:
    segments: int
    target_dim: int
    original_dim: int
    seeds: list
    projected: np.ndarray
    identity: bool = False

    @property
    def segment_dim(self) -> int:
        return self.original_dim // self.segments

    @property
    def nbytes(self) -> int:
        return 4 * self.projected.size

    def projection(self, j: int) -> np.ndarray:
        t, c = self.target_dim, self.segment_dim
        if self.identity:
            return np.eye(t, c)
        return make_rng(self.seeds[j]).normal(0.0, 1.0 / math.sqrt(t), size=(t, c))

    def reconstruct(self) -> np.ndarray:
        t = self.target_dim
        parts = [self.projected[:, j * t:(j + 1) * t].astype(np.float64) @ self.projection(j)
                 for j in range(self.segments)]
        return np.hstack(parts)


def jl_project(table, segments: int, target_dim: int, rng=None, identity: bool = False) -> ProjectedTable:
    """Project each ``d/segments`` chunk with its own Gaussian ``t x (d/s)`` map."""
    x = np.asarray(table, dtype=np.float64)
    d = x.shape[1]
    if segments < 1 or d % segments:
        raise ConfigError(f"{segments} segments do not divide d={d}")
    if not 1 <= target_dim <= d // segments:
        raise ConfigError(f"target_dim must be in [1, {d // segments}], got {target_dim}")
    if identity and target_dim != d // segments:
        raise ConfigError("identity mode needs target_dim == d / segments")
    if rng is None and not identity:
        raise ParameterError("jl_project needs an rng")
    seeds = [0] * segments if identity else [int(s) for s in rng.integers(0, 2**63, size=segments)]
    pt = ProjectedTable(segments, target_dim, d, seeds, np.empty((x.shape[0], 0)), identity)
    c = pt.segment_dim
    parts = [x[:, j * c:(j + 1) * c] @ pt.projection(j).T for j in range(segments)]
    pt.projected = np.hstack(parts).astype(np.float32)
    return pt


def jl_reconstruct_row(pt: ProjectedTable, i: int) -> np.ndarray:
    t = pt.target_dim
    row = pt.projected[i].astype(np.float64)
    return np.concatenate([row[j * t:(j + 1) * t] @ pt.projection(j) for j in range(pt.segments)])


def jl_reconstruct_vector(pt: ProjectedTable, stored) -> np.ndarray:
    """Map an arbitrary stored-space vector back; linear in ``stored``."""
    t = pt.target_dim
    stored = np.asarray(stored, dtype=np.float64)
    return np.concatenate([stored[j * t:(j + 1) * t] @ pt.projection(j) for j in range(pt.segments)])
