"""Epoch loop, evaluation cadence and the native-vs-decomposed parity driver."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np


from .data import Dataset
from .errors import DivergenceError, ParameterError
from .metrics import auc, bce_loss, sigmoid
from .model import MiniCtrModel, ModelConfig, resolve_variant
from .optim import make_optimizer
from .tensor import child_seed, make_rng

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("step", "train_loss", "val_loss", "val_auc")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2
    batch_size: int = 65536
    learning_rate: float = 0.05
    optimizer: str = "adagrad"
    seed: int = 0
    adagrad_epsilon: float = 1e-8
    evals_per_epoch: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adagrad"):
            raise ParameterError(f"optimizer must be sgd or adagrad, got {self.optimizer!r}")
        if self.evals_per_epoch < 1:
            raise ParameterError("evals_per_epoch must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ParameterError(f"bad train config: {exc}") from None


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    final_auc: float = float("nan")
    wall_time: float = 0.0
    epochs: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.records:
            w.writerow([r["step"], repr(r["train_loss"]), repr(r["val_loss"]), repr(r["val_auc"])])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"records": self.records, "final_auc": self.final_auc,
                           "wall_time": self.wall_time, "epochs": self.epochs}, indent=2)

    def same_results(self, other: "TrainReport") -> bool:
        return self.records == other.records and self.final_auc == other.final_auc


def evaluate(model: MiniCtrModel, ds: Dataset, rows=None) -> tuple[float, float]:
    rows = ds.validation if rows is None else rows
    logits = model.predict(ds.categorical[rows], ds.dense[rows])
    labels = ds.labels[rows]
    return bce_loss(logits, labels), auc(logits, labels)


def train(model: MiniCtrModel, ds: Dataset, config: TrainConfig, optimizer=None) -> TrainReport:
    """Run ``config.epochs`` epochs of minibatch training, evaluating on the
    validation split ``evals_per_epoch`` times per epoch."""
    if ds.num_train < 1 or ds.num_train >= ds.num_samples:
        raise ParameterError("dataset needs non-empty train and validation splits")
    if optimizer is None:
        optimizer = make_optimizer(config.optimizer, config.learning_rate, config.adagrad_epsilon)
    steps_per_epoch = math.ceil(ds.num_train / config.batch_size)
    eval_points = {
        min(steps_per_epoch, math.ceil(steps_per_epoch * (j + 1) / config.evals_per_epoch))
        for j in range(config.evals_per_epoch)
    }
    report = TrainReport(epochs=config.epochs)
    start = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        _run_epochs(model, ds, config, optimizer, report, steps_per_epoch, eval_points)
    report.final_auc = report.records[-1]["val_auc"]
    report.wall_time = time.perf_counter() - start
    return report


def _run_epochs(model, ds, config, optimizer, report, steps_per_epoch, eval_points):
    step = 0
    running, running_n = 0.0, 0
    for epoch in range(config.epochs):
        perm = make_rng(child_seed(config.seed, 20, epoch)).permutation(ds.num_train)
        for b in range(steps_per_epoch):
            rows = perm[b * config.batch_size:(b + 1) * config.batch_size]
            rows.sort()
            cats, dense, y = ds.categorical[rows], ds.dense[rows], ds.labels[rows]
            logits, cache = model.forward(cats, dense, cache=True)
            loss = bce_loss(logits, y)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite training loss {loss} at step {step + 1} (epoch {epoch})")
            upstream = (sigmoid(logits) - y) / len(rows)
            model.apply(model.backward(cache, upstream), optimizer)
            step += 1
            running += loss * len(rows)
            running_n += len(rows)
            if b + 1 in eval_points:
                val_loss, val_auc = evaluate(model, ds)
                if not math.isfinite(val_loss):
                    raise DivergenceError(f"non-finite validation loss at step {step}")
                bad = [k for k, v in model.mlp.items() if not np.isfinite(v).all()]
                if bad:
                    raise DivergenceError(f"non-finite weights {bad} at step {step}")
                report.records.append({"step": step, "train_loss": running / running_n,
                                       "val_loss": val_loss, "val_auc": val_auc})
                log.info("step %d train_loss %.5f val_loss %.5f val_auc %.5f",
                         step, running / running_n, val_loss, val_auc)
                running, running_n = 0.0, 0


def build_model(ds: Dataset, model_config: ModelConfig, variant: dict, seed: int) -> MiniCtrModel:
    assignment = resolve_variant(ds.cardinalities, model_config.embedding_dim, variant)
    return MiniCtrModel.create(ds.cardinalities, ds.dense_width, model_config, assignment, seed)


def variant_label(model: MiniCtrModel) -> tuple[str, str, str]:
    kinds = [e.kind for e in model.embeddings if e.kind != "native"]
    if not kinds:
        return "native", "", ""
    first = next(e for e in model.embeddings if e.kind != "native")
    r = getattr(first.config, "r", "")
    p = getattr(first.config, "p", "")
    return f"{first.kind}[{len(kinds)}]", str(r), str(p)


def parity_experiment(ds: Dataset, model_config: ModelConfig, variants: list, config: TrainConfig,
                      seeds=None) -> list[dict]:
    """Train every variant from the same seed(s); one row per (variant, seed)."""
    if not variants:
        raise ParameterError("need at least one variant")
    seeds = [config.seed] if seeds is None else list(seeds)
    rows = []
    for v in variants:
        for seed in seeds:
            cfg = TrainConfig(**dict(config.to_dict(), seed=seed, epochs=v.get("epochs", config.epochs)))
            model = build_model(ds, model_config, v, seed)
            native_bytes = sum(4 * n * model_config.embedding_dim for n in ds.cardinalities)
            report = train(model, ds, cfg)
            layer, r, p = variant_label(model)
            rows.append({
                "name": v.get("name", layer),
                "layer": layer,
                "r": r,
                "p": p,
                "param_bytes": model.embedding_bytes,
                "size_mb": model.embedding_bytes / 2**20,
                "native_bytes": native_bytes,
                "epochs": cfg.epochs,
                "seed": seed,
                "auc": report.final_auc,
                "wall_time": report.wall_time,
            })
    return rows


def seed_stability_table(rows: list) -> dict:
    """``{variant name: [auc per seed]}`` in seed order."""
    out: dict = {}
    for r in rows:
        out.setdefault(r["name"], []).append(r["auc"])
    return out
