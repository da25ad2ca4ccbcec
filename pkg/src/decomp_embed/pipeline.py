"""Config-driven drivers behind the CLI: dataset resolution, training runs,
parity tables and post-training compression of a checkpoint."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .compress import (
    cluster_rows,
    dequantize,
    jl_project,
    normalized_l2_loss,
    quantize_int4,
)
from .data import DatasetSpec, apply_frequency_threshold, generate, load_csv, load_dataset
from .errors import ConfigError, ParameterError, UndefinedMetricError
from .layers import EmbeddingSpec, NativeConfig, from_params
from .model import MiniCtrModel, ModelConfig
from .optim import make_optimizer
from .tensor import make_rng
from .train import TrainConfig, build_model, evaluate, parity_experiment, seed_stability_table, train

COMPARE_COLUMNS = ("layer", "r", "p", "size_mb", "epochs", "auc")
METHODS = ("int4-minmax", "int4-kmeans", "cluster", "jl")


def read_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg["_base"] = str(path.parent)
    return cfg


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() or base is None else Path(base) / p


def load_dataset_from(cfg: dict):
    """Dataset described by a config's ``dataset`` entry (plus optional ``threshold``)."""
    spec = cfg.get("dataset")
    if not isinstance(spec, dict):
        raise ConfigError("config needs a 'dataset' object")
    base = cfg.get("_base")
    if "csv" in spec:
        if "schema" not in spec:
            raise ConfigError("csv dataset needs a 'schema'")
        schema = spec["schema"]
        if isinstance(schema, str):
            schema = _resolve(base, schema)
        ds = load_csv(_resolve(base, spec["csv"]), schema, spec.get("validation_fraction", 0.1))
        desc = {"csv": str(_resolve(base, spec["csv"])),
                "schema": str(schema) if isinstance(schema, Path) else schema,
                "validation_fraction": spec.get("validation_fraction", 0.1)}
    elif "cache" in spec:
        ds = load_dataset(_resolve(base, spec["cache"]))
        desc = {"cache": str(_resolve(base, spec["cache"]))}
    else:
        ds_spec = DatasetSpec.from_dict(spec)
        ds = generate(ds_spec)
        desc = {"spec": ds_spec.to_dict(), "fingerprint": ds_spec.fingerprint()}
    threshold = int(cfg.get("threshold", 0))
    if threshold:
        ds = apply_frequency_threshold(ds, threshold)
    desc["threshold"] = threshold
    return ds, desc


def dataset_from_description(desc: dict):
    if not desc:
        return None
    if "spec" in desc:
        ds = generate(DatasetSpec.from_dict(desc["spec"]))
    elif "csv" in desc:
        ds = load_csv(desc["csv"], desc["schema"], desc.get("validation_fraction", 0.1))
    elif "cache" in desc:
        ds = load_dataset(desc["cache"])
    else:
        return None
    if desc.get("threshold"):
        ds = apply_frequency_threshold(ds, desc["threshold"])
    return ds


def model_and_train_config(cfg: dict, seed: int | None = None):
    mc = ModelConfig.from_dict(cfg.get("model", {}))
    tcfg = dict(cfg.get("train", {}))
    if seed is not None:
        tcfg["seed"] = seed
    return mc, TrainConfig.from_dict(tcfg)


def run_training(cfg: dict, seed: int | None = None):
    ds, desc = load_dataset_from(cfg)
    mc, tc = model_and_train_config(cfg, seed)
    variant = cfg.get("layers", {"kind": "native"})
    model = build_model(ds, mc, variant, tc.seed)
    optimizer = make_optimizer(tc.optimizer, tc.learning_rate, tc.adagrad_epsilon)
    report = train(model, ds, tc, optimizer)
    return model, optimizer, report, desc, tc


# ------------------------------------------------------------- compare ----


def run_compare(cfg: dict, seed: int | None = None) -> tuple[list, dict]:
    ds, _ = load_dataset_from(cfg)
    mc, tc = model_and_train_config(cfg, seed)
    variants = cfg.get("variants")
    if not variants:
        raise ConfigError("compare config needs a non-empty 'variants' list")
    rows = parity_experiment(ds, mc, variants, tc)
    stability = {}
    if cfg.get("seeds"):
        stability = seed_stability_table(parity_experiment(ds, mc, variants, tc, seeds=cfg["seeds"]))
    return rows, stability


def compare_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for r in rows:
        w.writerow([r["layer"], r["r"], r["p"], f"{r['size_mb']:.4f}", r["epochs"], f"{r['auc']:.4f}"])
    return buf.getvalue()


def stability_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = max((len(v) for v in table.values()), default=0)
    w.writerow(["variant"] + [f"auc(seed{i + 1})" for i in range(n)])
    for name, aucs in table.items():
        w.writerow([name] + [f"{a:.4f}" for a in aucs])
    return buf.getvalue()


def aligned(csv_text: str) -> str:
    rows = list(csv.reader(io.StringIO(csv_text)))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


# ------------------------------------------------------------ compress ----


def _compress_table(method, table, freqs, opts, rng):
    n, d = table.shape
    if method in ("int4-minmax", "int4-kmeans"):
        qt = quantize_int4(table, method.split("-")[1])
        arrays = {"packed": qt.packed}
        if qt.strategy == "minmax":
            arrays.update(scale=qt.scale, offset=qt.offset)
        else:
            arrays["codebook"] = qt.codebook
        return dequantize(qt), qt.nbytes, {"strategy": qt.strategy, "shape": [n, d]}, arrays
    if method == "cluster":
        k = opts.get("k")
        k = max(1, int(round(n * opts.get("k_fraction", 0.1)))) if k is None else min(int(k), n)
        ct = cluster_rows(table, freqs, k, opts.get("init", "frequent"), rng=rng)
        return (ct.reconstruct(), ct.nbytes, {"k": k, "objective": ct.objective},
                {"centroids": ct.centroids, "assignment": ct.assignment.astype(np.int32)})
    if method == "jl":
        s = int(opts.get("segments", 1))
        t = opts.get("target_dim")
        t = max(1, (d // s) // 2) if t is None else int(t)
        pt = jl_project(table, s, t, rng)
        return (pt.reconstruct().astype(np.float32), pt.nbytes,
                {"segments": s, "target_dim": t, "seeds": pt.seeds, "shape": [n, d]},
                {"projected": pt.projected})
    raise ParameterError(f"unknown compression method {method!r}; expected one of {METHODS}")


def compress_checkpoint(ckpt: Checkpoint, method: str, opts: dict | None = None, seed: int = 0):
    """Compress every embedding table of ``ckpt``.

    Returns ``(report, tables)``; ``tables`` feeds
    :func:`decomp_embed.checkpoint.save_compressed`.
    """
    opts = opts or {}
    if method not in METHODS:
        raise ParameterError(f"unknown compression method {method!r}; expected one of {METHODS}")
    model = ckpt.model
    ds = dataset_from_description(ckpt.dataset)
    rng = make_rng(seed)
    per_table = []
    tables = []
    replaced = []
    for t, e in enumerate(model.embeddings):
        full = e.materialize().astype(np.float32)
        freqs = ds.counts[t].astype(np.float64) if ds is not None else np.ones(e.n)
        approx, nbytes, meta, arrays = _compress_table(method, full, freqs, opts, rng)
        approx = np.asarray(approx, dtype=np.float32)
        loss = normalized_l2_loss(full, approx)
        per_table.append({"table": t, "kind": e.kind, "n": e.n, "d": e.d,
                          "original_bytes": 4 * full.size, "parameter_bytes": e.param_bytes(),
                          "compressed_bytes": int(nbytes), "normalized_l2_loss": loss})
        tables.append((dict(meta, table=t, kind=e.kind), arrays))
        replaced.append(from_params("native", EmbeddingSpec(e.n, e.d, e.spec.init_std), NativeConfig(),
                                    {"E": approx}))
    report = {
        "method": method,
        "original_bytes": sum(r["original_bytes"] for r in per_table),
        "parameter_bytes": sum(r["parameter_bytes"] for r in per_table),
        "compressed_bytes": sum(r["compressed_bytes"] for r in per_table),
        "tables": per_table,
        "validation_auc_before": None,
        "validation_auc_after": None,
    }
    if ds is not None:
        compressed_model = MiniCtrModel(replaced, model.dense_width, model.mlp, model.model_config)
        try:
            report["validation_auc_before"] = evaluate(model, ds)[1]
            report["validation_auc_after"] = evaluate(compressed_model, ds)[1]
        except UndefinedMetricError:
            pass
    return report, tables
