"""Dense numeric helpers every other module builds on.

Matrices are plain row-major numpy arrays. Trained parameters are float32;
float64 is used for oracles and gradient checks. All randomness comes from
numpy's PCG64 bit generator so a seed reproduces a stream exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, ShapeError

RNG_ALGORITHM = "PCG64"
DEFAULT_DTYPE = np.float32


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; ``seed`` is interpreted as an unsigned 64-bit integer."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ParameterError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def child_seed(seed: int, *keys: int) -> int:
    """Derive a stable 64-bit seed for a named sub-stream."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def as_matrix(a, dtype=None) -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=dtype)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def rng_normal(rng: np.random.Generator, rows: int, cols: int, mean: float = 0.0,
               std: float = 1.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
    if std < 0:
        raise ParameterError(f"std must be >= 0, got {std}")
    if std == 0:
        return np.full((rows, cols), mean, dtype=dtype)
    # Draw in float64 then cast so both dtypes see the same underlying stream.
    out = rng.standard_normal((rows, cols))
    out *= std
    out += mean
    return out.astype(dtype, copy=False)


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))
