"""Batch-size sweep measuring lookup + forward latency and throughput.

Inputs for every batch are generated before timing starts, ids are drawn
Zipf-distributed per table, and the first ``warmup`` passes are discarded.
With more than one worker, each worker thread runs its own passes against
the same frozen model and all latencies are pooled after the threads join.
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import sample_zipf
from .model import MiniCtrModel
from .tensor import child_seed, make_rng

DETERMINISTIC_ENV = "DECOMP_EMBED_DETERMINISTIC"
BENCH_COLUMNS = ("batch_size", "mean_latency_seconds", "p99_latency_seconds",
                 "throughput_samples_per_second", "layer_kind", "variant_tag", "error")
DEFAULT_WARMUP = 10


def deterministic_mode() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "") not in ("", "0", "false", "False")


@dataclass
class BenchRecord:
    batch_size: int
    mean_latency_seconds: float | None
    p99_latency_seconds: float | None
    throughput_samples_per_second: float | None
    layer_kind: str
    variant_tag: str
    error: str = ""


@dataclass
class BenchReport:
    records: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for r in self.records:
            w.writerow(["" if getattr(r, c) is None else
                        repr(getattr(r, c)) if isinstance(getattr(r, c), float) else getattr(r, c)
                        for c in BENCH_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"records": [asdict(r) for r in self.records],
                           "environment": self.environment}, indent=2)


def cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def layer_kind_tag(model: MiniCtrModel) -> str:
    kinds = sorted({e.kind for e in model.embeddings})
    return "+".join(kinds)


def estimate_batch_bytes(model: MiniCtrModel, batch: int) -> int:
    width = model.mlp["W1"].shape[0] + sum(model.model_config.hidden) * 2 + 1
    # activations plus per-table gather temporaries, float32, with 2x headroom
    return 2 * 4 * batch * (width + 4 * sum(e.d for e in model.embeddings))


def make_inputs(model: MiniCtrModel, batch: int, zipf_exponent: float, seed: int):
    cats = np.empty((batch, len(model.embeddings)), dtype=np.int64)
    for t, e in enumerate(model.embeddings):
        rng = make_rng(child_seed(seed, 30, t, batch))
        cats[:, t] = sample_zipf(rng, e.n, zipf_exponent, batch)
    dense = make_rng(child_seed(seed, 31, batch)).standard_normal((batch, model.dense_width))
    return cats, dense.astype(np.float32)


def _time_passes(model, cats, dense, iters, warmup):
    for _ in range(warmup):
        model.forward(cats, dense)
    out = []
    for _ in range(iters):
        t0 = time.perf_counter()
        model.forward(cats, dense)
        out.append(time.perf_counter() - t0)
    return out


def run_bench(model: MiniCtrModel, batches, iters: int, warmup: int = DEFAULT_WARMUP,
              zipf_exponent: float = 1.1, seed: int = 0, workers: int = 1, variant_tag: str = "",
              memory_budget_bytes: int | None = None) -> BenchReport:
    if not batches:
        raise ValueError("need at least one batch size")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if deterministic_mode():
        workers = 1
    report = BenchReport(environment={"cpu": cpu_model(), "threads": workers,
                                      "python": platform.python_version(),
                                      "numpy": np.__version__, "warmup": warmup, "iters": iters})
    kind = layer_kind_tag(model)
    for batch in batches:
        batch = int(batch)
        if memory_budget_bytes is not None and estimate_batch_bytes(model, batch) > memory_budget_bytes:
            report.records.append(BenchRecord(batch, None, None, None, kind, variant_tag,
                                              "batch exceeds memory budget"))
            continue
        try:
            inputs = [make_inputs(model, batch, zipf_exponent, child_seed(seed, w)) for w in range(workers)]
            if workers == 1:
                lat = _time_passes(model, *inputs[0], iters, warmup)
            else:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    futures = [pool.submit(_time_passes, model, c, d, iters, warmup) for c, d in inputs]
                    lat = [x for f in futures for x in f.result()]
        except MemoryError:
            report.records.append(BenchRecord(batch, None, None, None, kind, variant_tag, "out of memory"))
            continue
        mean = float(np.mean(lat))
        p99 = float(np.percentile(lat, 99))
        report.records.append(BenchRecord(batch, mean, p99, batch / mean, kind, variant_tag))
    return report
