import numpy as np
import pytest

from decomp_embed.layers import (
    EmbeddingSpec,
    FrobeniusConfig,
    LowRankConfig,
    MemComConfig,
    TTConfig,
    build,
)
from decomp_embed.tensor import make_rng

# n=12, d=6, r=2, p=2, TT ranks <= 2
SMALL_CONFIGS = {
    "native": None,
    "lowrank": LowRankConfig(2),
    "quotient_remainder": None,
    "memcom": MemComConfig(5),
    "tensor_train": TTConfig((2, 2, 3), (3, 2, 1), (1, 2, 2, 1)),
    "frobenius": FrobeniusConfig(2, 2),
}


def small_layer(kind, seed=0, dtype=np.float64, init_std=0.5):
    layer = build(kind, EmbeddingSpec(12, 6, init_std), SMALL_CONFIGS[kind], make_rng(seed), dtype)
    if kind == "memcom":
        # break the all-ones start so the scalar gradients are exercised
        layer.params["s"][:] = make_rng(seed + 1).normal(1.0, 0.3, layer.params["s"].shape)
    return layer


def fd_gradient(layer, indices, upstream, h=1e-5):
    """Central finite differences of sum_b <upstream[b], row(indices[b])>."""
    out = {}
    for name, param in layer.params.items():
        g = np.zeros_like(param)
        flat = param.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            plus = np.sum(layer.lookup(indices) * upstream)
            flat[j] = old - h
            minus = np.sum(layer.lookup(indices) * upstream)
            flat[j] = old
            gflat[j] = (plus - minus) / (2 * h)
        out[name] = g
    return out


def dense(g):
    return g.to_dense() if hasattr(g, "to_dense") else np.asarray(g)


def max_rel_error(analytic, numeric):
    worst = 0.0
    for name in numeric:
        a = dense(analytic[name])
        n = numeric[name]
        scale = max(np.abs(n).max(), np.abs(a).max(), 1e-12)
        worst = max(worst, float(np.abs(a - n).max() / scale))
    return worst


@pytest.fixture
def rng():
    return make_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
