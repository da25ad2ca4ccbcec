import csv
import io
import json

import numpy as np
import pytest

from decomp_embed.bench import (
    BENCH_COLUMNS,
    DETERMINISTIC_ENV,
    estimate_batch_bytes,
    make_inputs,
    run_bench,
)
from decomp_embed.layers import FrobeniusConfig, NativeConfig
from decomp_embed.model import MiniCtrModel, ModelConfig

BIG_N = 200_000


def bench_model(kind="native", n=BIG_N, d=32):
    cfg = NativeConfig() if kind == "native" else FrobeniusConfig(8, 4)
    mc = ModelConfig(d, (64, 32))
    return MiniCtrModel.create([n, 1000], 4, mc, [(kind, cfg), ("native", NativeConfig())], 0)


@pytest.fixture(scope="module")
def small_model():
    return bench_model(n=5000, d=8)


class TestReport:
    def test_single_batch_single_iter(self, small_model):
        rep = run_bench(small_model, [256], iters=1, warmup=0)
        assert len(rep.records) == 1
        r = rep.records[0]
        assert r.mean_latency_seconds > 0 and r.p99_latency_seconds > 0
        assert r.throughput_samples_per_second == pytest.approx(256 / r.mean_latency_seconds, rel=1e-9)

    def test_identity_on_every_record(self, small_model):
        rep = run_bench(small_model, [64, 128, 512, 1024], iters=5, warmup=2, workers=2)
        for r in rep.records:
            assert r.throughput_samples_per_second == pytest.approx(
                r.batch_size / r.mean_latency_seconds, rel=1e-9)
            assert r.mean_latency_seconds > 0 and r.p99_latency_seconds > 0

    def test_csv_header_and_json(self, small_model):
        rep = run_bench(small_model, [128], iters=2, warmup=0, variant_tag="demo")
        rows = list(csv.reader(io.StringIO(rep.to_csv())))
        assert tuple(rows[0]) == BENCH_COLUMNS
        assert rows[1][0] == "128" and rows[1][4] == "native" and rows[1][5] == "demo"
        data = json.loads(rep.to_json())
        assert data["environment"]["threads"] == 1
        assert data["environment"]["cpu"]

    def test_memory_budget_error_row_and_continues(self, small_model):
        budget = estimate_batch_bytes(small_model, 512)
        rep = run_bench(small_model, [256, 4096, 512], iters=1, warmup=0, memory_budget_bytes=budget)
        assert [r.batch_size for r in rep.records] == [256, 4096, 512]
        assert rep.records[1].error and rep.records[1].mean_latency_seconds is None
        assert not rep.records[0].error and not rep.records[2].error
        assert rep.to_csv().splitlines()[2].startswith("4096,,,,")

    def test_deterministic_mode_forces_one_worker(self, small_model, monkeypatch):
        monkeypatch.setenv(DETERMINISTIC_ENV, "1")
        rep = run_bench(small_model, [64], iters=2, warmup=0, workers=4)
        assert rep.environment["threads"] == 1

    def test_workers_pool_all_latencies(self, small_model):
        rep = run_bench(small_model, [64], iters=3, warmup=0, workers=3)
        assert rep.environment["threads"] == 3

    @pytest.mark.parametrize("bad", [dict(batches=[], iters=1), dict(batches=[8], iters=0)])
    def test_bad_arguments(self, small_model, bad):
        with pytest.raises(ValueError):
            run_bench(small_model, **bad)


class TestInputs:
    def test_inputs_deterministic_and_in_range(self, small_model):
        c1, d1 = make_inputs(small_model, 1000, 1.1, 5)
        c2, d2 = make_inputs(small_model, 1000, 1.1, 5)
        assert np.array_equal(c1, c2) and np.array_equal(d1, d2)
        for t, e in enumerate(small_model.embeddings):
            assert c1[:, t].min() >= 0 and c1[:, t].max() < e.n

    def test_inputs_are_heavy_tailed(self, small_model):
        cats, _ = make_inputs(small_model, 20000, 1.1, 0)
        counts = np.sort(np.bincount(cats[:, 0]))[::-1]
        assert counts[:10].sum() > 0.2 * len(cats)


class TestScaling:
    def test_doubling_batch_past_saturation(self):
        model = bench_model()
        rep = run_bench(model, [8192, 16384], iters=30, warmup=5)
        ratio = rep.records[1].mean_latency_seconds / rep.records[0].mean_latency_seconds
        print(f"latency ratio 16384/8192 = {ratio:.3f}")
        assert 1.5 <= ratio <= 3.0

    def test_native_vs_frobenius(self):
        native, frob = bench_model("native"), bench_model("frobenius")
        byte_ratio = native.embeddings[0].param_bytes() / frob.embeddings[0].param_bytes()
        ln = run_bench(native, [16384], iters=20, warmup=5).records[0].mean_latency_seconds
        lf = run_bench(frob, [16384], iters=20, warmup=5).records[0].mean_latency_seconds
        print(f"bytes ratio {byte_ratio:.1f}x, latency frobenius/native {lf / ln:.2f}")
        assert byte_ratio >= 100
        assert lf / ln <= 5 and ln / lf <= 5
