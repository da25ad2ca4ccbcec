"""Model checkpoints and compressed artifacts in the ``CEMB`` container.

Both use :mod:`decomp_embed.container` with magic ``b"CEMB"`` and format
version 1. The JSON header's ``meta.artifact`` field tells them apart
(``"model"`` or ``"compressed"``).

Model checkpoint arrays are named ``mlp.<key>``, ``emb<t>.<param>`` and
``opt.<state key>``; the header records, per table, the layer kind, its
config, and the :class:`~decomp_embed.layers.EmbeddingSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass, field


from . import container
from .errors import IntegrityError
from .layers import EmbeddingSpec, config_from_dict, config_to_dict, from_params
from .model import MLP_KEYS, MiniCtrModel, ModelConfig
from .optim import make_optimizer

MAGIC = b"CEMB"
VERSION = 1


@dataclass
class Checkpoint:
    model: MiniCtrModel
    optimizer: object = None
    seed: int = 0
    dataset: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def save_checkpoint(model: MiniCtrModel, path, optimizer=None, seed: int = 0,
                    dataset: dict | None = None, extra: dict | None = None) -> None:
    tables = []
    arrays = {}
    for k in MLP_KEYS:
        arrays[f"mlp.{k}"] = model.mlp[k]
    for t, e in enumerate(model.embeddings):
        tables.append({
            "kind": e.kind,
            "config": config_to_dict(e.config),
            "spec": {"n": e.spec.n, "d": e.spec.d, "init_std": e.spec.init_std},
            "params": list(e.params),
        })
        for name, value in e.params.items():
            arrays[f"emb{t}.{name}"] = value
    opt_meta = None
    if optimizer is not None:
        opt_meta = {"name": optimizer.name, "lr": optimizer.lr,
                    "eps": getattr(optimizer, "eps", None), "keys": sorted(optimizer.state)}
        for key in sorted(optimizer.state):
            arrays[f"opt.{key}"] = optimizer.state[key]
    meta = {
        "artifact": "model",
        "topology": {"dense_width": model.dense_width, "model": model.model_config.to_dict(),
                     "tables": tables},
        "optimizer": opt_meta,
        "seed": int(seed),
        "dataset": dataset or {},
        "extra": extra or {},
    }
    container.write(path, MAGIC, VERSION, meta, arrays)


def load_checkpoint(path) -> Checkpoint:
    meta, arrays = container.read(path, MAGIC, VERSION)
    if meta.get("artifact") != "model":
        raise IntegrityError(f"{path} holds a {meta.get('artifact')!r} artifact, not a model checkpoint")
    try:
        topo = meta["topology"]
        embeddings = []
        for t, info in enumerate(topo["tables"]):
            spec = EmbeddingSpec(**info["spec"])
            cfg = config_from_dict(info["kind"], info["config"])
            params = {name: arrays[f"emb{t}.{name}"] for name in info["params"]}
            embeddings.append(from_params(info["kind"], spec, cfg, params))
        mlp = {k: arrays[f"mlp.{k}"] for k in MLP_KEYS}
        model = MiniCtrModel(embeddings, topo["dense_width"], mlp, ModelConfig.from_dict(topo["model"]))
        optimizer = None
        if meta.get("optimizer"):
            o = meta["optimizer"]
            optimizer = make_optimizer(o["name"], o["lr"], o["eps"] if o["eps"] is not None else 1e-8)
            optimizer.state = {k: arrays[f"opt.{k}"] for k in o["keys"]}
    except KeyError as exc:
        raise IntegrityError(f"checkpoint is missing entry {exc}") from None
    return Checkpoint(model, optimizer, meta["seed"], meta.get("dataset", {}), meta.get("extra", {}))


def save_compressed(path, method: str, tables: list, report: dict) -> None:
    """``tables`` is a list of ``(meta dict, {array name: array})`` per embedding table."""
    arrays = {}
    metas = []
    for t, (m, arrs) in enumerate(tables):
        metas.append(dict(m, arrays=sorted(arrs)))
        arrays.update({f"t{t}.{k}": v for k, v in arrs.items()})
    meta = {"artifact": "compressed", "method": method, "tables": metas, "report": report}
    container.write(path, MAGIC, VERSION, meta, arrays)


def load_compressed(path) -> tuple[dict, list]:
    meta, arrays = container.read(path, MAGIC, VERSION)
    if meta.get("artifact") != "compressed":
        raise IntegrityError(f"{path} does not hold a compressed artifact")
    tables = [(m, {k: arrays[f"t{t}.{k}"] for k in m["arrays"]}) for t, m in enumerate(meta["tables"])]
    return meta, tables
